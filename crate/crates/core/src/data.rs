//! Data pipeline: interaction logs, filtering, fragmenting, splitting,
//! batching, synthetic data, and the on-disk dataset bundle.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_MIN_SEQ_LEN: usize = 3;
pub const DEFAULT_MIN_ITEM_FREQ: usize = 5;
/// One year in seconds; fragments never span more than this from their first
/// interaction.
pub const DEFAULT_WINDOW_SECONDS: i64 = 31_536_000;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// One parsed interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since epoch; non-negative.
    pub timestamp: i64,
}

/// Raw interaction log in input order.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
}

/// One position-annotated fragment of a user's history.
///
/// `positions[i] == i + 1`: absolute 1-based positions, never relative
/// offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    pub user_index: usize,
    pub items: Vec<usize>,
    pub positions: Vec<usize>,
}

impl SequenceRecord {
    pub fn new(user_index: usize, items: Vec<usize>) -> Self {
        let positions = (1..=items.len()).collect();
        SequenceRecord { user_index, items, positions }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The record truncated to its first `len` items (positions stay 1..len).
    pub fn prefix(&self, len: usize) -> SequenceRecord {
        SequenceRecord {
            user_index: self.user_index,
            items: self.items[..len].to_vec(),
            positions: self.positions[..len].to_vec(),
        }
    }
}

/// Bidirectional id <-> dense index map. Indices are assigned in sorted id
/// order, so a vocabulary is fully determined by its id set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    index_to_id: Vec<String>,
    id_to_index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn from_sorted_ids(ids: Vec<String>) -> Self {
        let id_to_index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { index_to_id: ids, id_to_index }
    }

    pub fn len(&self) -> usize {
        self.index_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_id.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.id_to_index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> &str {
        &self.index_to_id[index]
    }
}

/// Filtered, position-annotated sequences with vocabularies and an optional
/// train/test assignment.
#[derive(Debug, Clone, Default)]
pub struct SequenceSet {
    pub sequences: Vec<SequenceRecord>,
    /// Indices into `sequences`; empty until `split_train_test` runs.
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub n_users: usize,
    pub m_items: usize,
    pub user_vocab: Vocab,
    pub item_vocab: Vocab,
}

impl SequenceSet {
    pub fn train(&self) -> Vec<SequenceRecord> {
        self.train_ids.iter().map(|&i| self.sequences[i].clone()).collect()
    }

    pub fn test(&self) -> Vec<SequenceRecord> {
        self.test_ids.iter().map(|&i| self.sequences[i].clone()).collect()
    }

    /// Longest sequence over the whole set.
    pub fn max_len(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

/// Parse a TSV stream of `user \t item \t timestamp` lines.
///
/// Empty lines are skipped; anything else malformed reports its 1-based line
/// number. An input with no records at all is an error.
pub fn parse_interactions<R: BufRead>(reader: R) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse { line: lineno, msg: "empty user or item id".into() });
        }
        let timestamp: i64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid timestamp {:?}", fields[2]),
        })?;
        if timestamp < 0 {
            return Err(Error::Parse { line: lineno, msg: "negative timestamp".into() });
        }
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset("no interaction records in input".into()));
    }
    Ok(InteractionLog { records })
}

/// Build filtered, fragmented, position-annotated sequences from a log.
///
/// Per user, interactions are sorted by timestamp (ties keep input order) and
/// segmented greedily: a fragment holds interactions within `window_seconds`
/// of its first one. Items below `min_item_freq` corpus-wide are removed
/// before segmentation and fragments shorter than `min_seq_len` are dropped;
/// the two filters are iterated until neither removes anything, so re-running
/// the builder on its own output is the identity.
pub fn build_sequences(
    log: &InteractionLog,
    min_seq_len: usize,
    min_item_freq: usize,
    window_seconds: i64,
) -> Result<SequenceSet> {
    if log.records.is_empty() {
        return Err(Error::EmptyDataset("empty interaction log".into()));
    }
    if min_seq_len < 1 {
        return Err(Error::Config("min_seq_len must be >= 1".into()));
    }

    // Per-user interaction lists, time-ordered with stable input-order ties.
    let mut per_user: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
    for rec in &log.records {
        per_user.entry(&rec.user_id).or_default().push(rec);
    }
    for recs in per_user.values_mut() {
        recs.sort_by_key(|r| r.timestamp); // stable: ties keep input order
    }

    // alive[user][i] marks interactions that survive filtering so far.
    let users: Vec<&str> = per_user.keys().copied().collect();
    let mut alive: BTreeMap<&str, Vec<bool>> =
        users.iter().map(|u| (*u, vec![true; per_user[u].len()])).collect();

    let mut fragments: Vec<(usize, Vec<&str>)> = Vec::new(); // (user slot, item ids)
    loop {
        // Frequency filter over currently-alive interactions.
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for user in &users {
            for (i, rec) in per_user[user].iter().enumerate() {
                if alive[user][i] {
                    *freq.entry(&rec.item_id).or_default() += 1;
                }
            }
        }
        let mut changed = false;
        for user in &users {
            let flags = alive.get_mut(user).unwrap();
            for (i, rec) in per_user[user].iter().enumerate() {
                if flags[i] && freq[rec.item_id.as_str()] < min_item_freq {
                    flags[i] = false;
                    changed = true;
                }
            }
        }

        // Segment survivors per user and apply the length filter.
        fragments.clear();
        for (slot, user) in users.iter().enumerate() {
            let flags = alive.get_mut(user).unwrap();
            let recs = &per_user[user];
            let alive_idx: Vec<usize> = (0..recs.len()).filter(|&i| flags[i]).collect();
            let mut start = 0;
            while start < alive_idx.len() {
                let start_ts = recs[alive_idx[start]].timestamp;
                let mut end = start;
                while end < alive_idx.len()
                    && recs[alive_idx[end]].timestamp - start_ts <= window_seconds
                {
                    end += 1;
                }
                let frag = &alive_idx[start..end];
                if frag.len() >= min_seq_len {
                    fragments
                        .push((slot, frag.iter().map(|&i| recs[i].item_id.as_str()).collect()));
                } else {
                    for &i in frag {
                        flags[i] = false;
                        changed = true;
                    }
                }
                start = end;
            }
        }

        if !changed {
            break;
        }
    }

    if fragments.is_empty() {
        return Err(Error::EmptyDataset("all interactions filtered out".into()));
    }

    // Vocabularies over surviving entities only, indexed in sorted id order.
    let mut item_ids: Vec<String> = fragments
        .iter()
        .flat_map(|(_, items)| items.iter().map(|s| s.to_string()))
        .collect();
    item_ids.sort();
    item_ids.dedup();
    let item_vocab = Vocab::from_sorted_ids(item_ids);

    let mut user_ids: Vec<String> =
        fragments.iter().map(|(slot, _)| users[*slot].to_string()).collect();
    user_ids.sort();
    user_ids.dedup();
    let user_vocab = Vocab::from_sorted_ids(user_ids);

    let sequences: Vec<SequenceRecord> = fragments
        .iter()
        .map(|(slot, items)| {
            let user_index = user_vocab.index_of(users[*slot]).unwrap();
            let item_indices =
                items.iter().map(|it| item_vocab.index_of(it).unwrap()).collect();
            SequenceRecord::new(user_index, item_indices)
        })
        .collect();

    Ok(SequenceSet {
        n_users: user_vocab.len(),
        m_items: item_vocab.len(),
        sequences,
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        user_vocab,
        item_vocab,
    })
}

/// Assign sequences to train/test: a seeded uniform permutation, with the
/// first ceil(ratio * total) going to train.
pub fn split_train_test(set: &mut SequenceSet, ratio: f64, seed: u64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must be in (0, 1)")));
    }
    if set.sequences.len() < 2 {
        return Err(Error::Config("need at least 2 sequences to split".into()));
    }
    let mut order: Vec<usize> = (0..set.sequences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (ratio * set.sequences.len() as f64).ceil() as usize;
    set.train_ids = order[..n_train].to_vec();
    set.test_ids = order[n_train..].to_vec();
    // Canonical order: the assignment is a partition, not a sequence.
    set.train_ids.sort_unstable();
    set.test_ids.sort_unstable();
    Ok(())
}

/// Shuffle `0..len` by seed and chunk into batches; the final partial batch
/// is kept. Callers derive a fresh seed per epoch.
pub fn make_batches(len: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Synthetic planted-pattern log: every user walks the cyclic chain
/// `item j -> item (j+1) mod m` from a seeded random offset, with each
/// emission replaced by a uniform random item with probability `noise`.
/// Timestamps increase strictly within each user's walk.
pub fn synth_dataset(
    n_users: usize,
    m_items: usize,
    seq_len: usize,
    noise: f64,
    seed: u64,
) -> Result<InteractionLog> {
    if m_items < seq_len + 1 {
        return Err(Error::Config(format!(
            "synth_dataset needs m_items >= seq_len + 1 ({m_items} < {})",
            seq_len + 1
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config("noise must be in [0, 1]".into()));
    }
    let mut records = Vec::with_capacity(n_users * seq_len);
    for u in 0..n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, u as u64));
        let offset = rng.gen_range(0..m_items);
        for s in 0..seq_len {
            let chain = (offset + s) % m_items;
            let item =
                if noise > 0.0 && rng.gen::<f64>() < noise { rng.gen_range(0..m_items) } else { chain };
            records.push(InteractionRecord {
                user_id: format!("u{u}"),
                item_id: format!("i{item}"),
                timestamp: 1_000_000 + (s as i64) * 3600,
            });
        }
    }
    Ok(InteractionLog { records })
}

// ---------------------------------------------------------------------------
// Dataset bundle I/O
// ---------------------------------------------------------------------------

pub const BUNDLE_SEQUENCES: &str = "sequences.tsv";
pub const BUNDLE_USER_VOCAB: &str = "vocab_users.tsv";
pub const BUNDLE_ITEM_VOCAB: &str = "vocab_items.tsv";
pub const BUNDLE_SPLIT: &str = "split.tsv";

/// Write the dataset bundle: sequences, both vocabularies, and the split
/// assignment.
pub fn write_bundle(set: &SequenceSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut seq_out = String::new();
    for seq in &set.sequences {
        let items: Vec<String> = seq.items.iter().map(|i| i.to_string()).collect();
        seq_out.push_str(&format!("{}\t{}\n", seq.user_index, items.join(",")));
    }
    std::fs::write(dir.join(BUNDLE_SEQUENCES), seq_out)?;

    let mut users_out = String::new();
    for i in 0..set.user_vocab.len() {
        users_out.push_str(&format!("{}\t{}\n", i, set.user_vocab.id_of(i)));
    }
    std::fs::write(dir.join(BUNDLE_USER_VOCAB), users_out)?;

    let mut items_out = String::new();
    for i in 0..set.item_vocab.len() {
        items_out.push_str(&format!("{}\t{}\n", i, set.item_vocab.id_of(i)));
    }
    std::fs::write(dir.join(BUNDLE_ITEM_VOCAB), items_out)?;

    let mut split_out = String::new();
    let mut label = vec![""; set.sequences.len()];
    for &i in &set.train_ids {
        label[i] = "train";
    }
    for &i in &set.test_ids {
        label[i] = "test";
    }
    for (i, l) in label.iter().enumerate() {
        split_out.push_str(&format!("{i}\t{l}\n"));
    }
    std::fs::write(dir.join(BUNDLE_SPLIT), split_out)?;
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line: lineno + 1, msg: "bad vocab line".into() });
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: "bad vocab index".into() })?;
        if index != ids.len() {
            return Err(Error::Parse { line: lineno + 1, msg: "vocab indices not dense".into() });
        }
        ids.push(fields[1].to_string());
    }
    Ok(Vocab::from_sorted_ids(ids))
}

/// Read a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<SequenceSet> {
    let user_vocab = read_vocab(&dir.join(BUNDLE_USER_VOCAB))?;
    let item_vocab = read_vocab(&dir.join(BUNDLE_ITEM_VOCAB))?;
    let m = item_vocab.len();
    let n = user_vocab.len();

    let text = std::fs::read_to_string(dir.join(BUNDLE_SEQUENCES))?;
    let mut sequences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line: lineno + 1, msg: "bad sequence line".into() });
        }
        let user_index: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: "bad user index".into() })?;
        let items: Vec<usize> = fields[1]
            .split(',')
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: "bad item index".into() })?;
        if user_index >= n || items.iter().any(|&i| i >= m) {
            return Err(Error::Parse { line: lineno + 1, msg: "index out of vocab range".into() });
        }
        sequences.push(SequenceRecord::new(user_index, items));
    }

    let text = std::fs::read_to_string(dir.join(BUNDLE_SPLIT))?;
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line: lineno + 1, msg: "bad split line".into() });
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: "bad sequence id".into() })?;
        if id >= sequences.len() {
            return Err(Error::Parse { line: lineno + 1, msg: "split id out of range".into() });
        }
        match fields[1] {
            "train" => train_ids.push(id),
            "test" => test_ids.push(id),
            other => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad split label {other:?}"),
                })
            }
        }
    }

    Ok(SequenceSet {
        sequences,
        train_ids,
        test_ids,
        n_users: n,
        m_items: m,
        user_vocab,
        item_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<InteractionLog> {
        parse_interactions(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn parse_single_line() {
        let log = parse("u1\ti1\t100\n").unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].timestamp, 100);
    }

    #[test]
    fn parse_bad_timestamp_names_line() {
        let err = parse("u1\ti1\tabc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn parse_preserves_order_against_reference_reader() {
        let text = "u1\ti1\t5\nu2\ti2\t1\nu1\ti3\t9\n";
        let log = parse(text).unwrap();
        // Line-by-line reference: split fields by hand, same order.
        let reference: Vec<(String, String, i64)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
            })
            .collect();
        assert_eq!(log.records.len(), 3);
        for (rec, (u, i, t)) in log.records.iter().zip(&reference) {
            assert_eq!((&rec.user_id, &rec.item_id, rec.timestamp), (u, i, *t));
        }
    }

    #[test]
    fn parse_empty_input_is_error() {
        assert!(matches!(parse("").unwrap_err(), Error::EmptyDataset(_)));
        assert!(matches!(parse("\n\n").unwrap_err(), Error::EmptyDataset(_)));
    }

    #[test]
    fn parse_wrong_field_count() {
        let err = parse("u1\ti1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    /// Short sequences are dropped even when their items are frequent.
    #[test]
    fn short_sequences_are_dropped() {
        // u_short has 2 interactions on items that are frequent thanks to the
        // other users.
        let mut text = String::new();
        for u in 0..5 {
            for (s, item) in ["a", "b", "c"].iter().enumerate() {
                text.push_str(&format!("u{u}\t{item}\t{}\n", 100 + s));
            }
        }
        text.push_str("u_short\ta\t100\nu_short\tb\t101\n");
        let set = build_sequences(&parse(&text).unwrap(), 3, 5, DEFAULT_WINDOW_SECONDS).unwrap();
        assert!(set.user_vocab.index_of("u_short").is_none());
        assert_eq!(set.sequences.len(), 5);
    }

    /// An item below the frequency threshold disappears everywhere.
    #[test]
    fn infrequent_items_are_removed() {
        let mut text = String::new();
        for u in 0..5 {
            for (s, item) in ["a", "b", "c"].iter().enumerate() {
                text.push_str(&format!("u{u}\t{item}\t{}\n", 100 + s));
            }
        }
        // "rare" appears 4 times corpus-wide (< 5).
        for u in 0..4 {
            text.push_str(&format!("u{u}\trare\t99\n"));
        }
        let set = build_sequences(&parse(&text).unwrap(), 3, 5, DEFAULT_WINDOW_SECONDS).unwrap();
        assert!(set.item_vocab.index_of("rare").is_none());
        assert_eq!(set.m_items, 3);
        for seq in &set.sequences {
            assert_eq!(seq.len(), 3);
        }
    }

    /// Hand-segmented oracle for the year window: 6 interactions with a
    /// 2-year gap after the third one split into two fragments of 3.
    #[test]
    fn window_splits_into_fragments() {
        let year = DEFAULT_WINDOW_SECONDS;
        let mut text = String::new();
        let stamps =
            [0i64, 1000, 2000, 2 * year + 100, 2 * year + 1100, 2 * year + 2100];
        // Replicate over 5 users so every item passes the frequency filter.
        for u in 0..5 {
            for (s, ts) in stamps.iter().enumerate() {
                text.push_str(&format!("u{u}\ti{s}\t{ts}\n"));
            }
        }
        let set = build_sequences(&parse(&text).unwrap(), 3, 5, year).unwrap();
        assert_eq!(set.sequences.len(), 10); // 2 fragments per user
        for seq in &set.sequences {
            assert_eq!(seq.len(), 3);
            assert_eq!(seq.positions, vec![1, 2, 3]);
        }
    }

    /// Timestamp ties keep input order.
    #[test]
    fn equal_timestamps_keep_input_order() {
        let mut text = String::new();
        for u in 0..5 {
            text.push_str(&format!("u{u}\tx\t100\nu{u}\ty\t100\nu{u}\tz\t100\n"));
        }
        let set = build_sequences(&parse(&text).unwrap(), 3, 5, DEFAULT_WINDOW_SECONDS).unwrap();
        let x = set.item_vocab.index_of("x").unwrap();
        let y = set.item_vocab.index_of("y").unwrap();
        let z = set.item_vocab.index_of("z").unwrap();
        for seq in &set.sequences {
            assert_eq!(seq.items, vec![x, y, z]);
        }
    }

    /// Re-running the builder on its own output changes nothing, and all
    /// vocabulary indices are dense.
    #[test]
    fn filtering_reaches_a_fixpoint_with_dense_vocab() {
        let log = synth_dataset(20, 30, 8, 0.3, 9).unwrap();
        let set = build_sequences(&log, 3, 2, DEFAULT_WINDOW_SECONDS).unwrap();
        // Rebuild from the surviving data expressed as a log again.
        let mut text = String::new();
        for seq in &set.sequences {
            for (i, item) in seq.items.iter().enumerate() {
                text.push_str(&format!(
                    "{}\t{}\t{}\n",
                    set.user_vocab.id_of(seq.user_index),
                    set.item_vocab.id_of(*item),
                    1_000_000 + i as i64 * 3600,
                ));
            }
        }
        let set2 = build_sequences(&parse(&text).unwrap(), 3, 2, DEFAULT_WINDOW_SECONDS).unwrap();
        assert_eq!(set.m_items, set2.m_items);
        assert_eq!(set.n_users, set2.n_users);
        assert_eq!(set.sequences.len(), set2.sequences.len());
        // Dense indices: every index occurs at least once.
        let mut seen_items = vec![false; set.m_items];
        let mut seen_users = vec![false; set.n_users];
        for seq in &set.sequences {
            seen_users[seq.user_index] = true;
            for &i in &seq.items {
                seen_items[i] = true;
            }
        }
        assert!(seen_items.iter().all(|&b| b));
        assert!(seen_users.iter().all(|&b| b));
    }

    #[test]
    fn split_ratios_and_determinism() {
        let log = synth_dataset(10, 30, 5, 0.0, 1).unwrap();
        let mut set = build_sequences(&log, 3, 1, DEFAULT_WINDOW_SECONDS).unwrap();
        assert_eq!(set.sequences.len(), 10);
        split_train_test(&mut set, 0.8, 7).unwrap();
        assert_eq!(set.train_ids.len(), 8);
        assert_eq!(set.test_ids.len(), 2);

        let mut set2 = set.clone();
        set2.train_ids.clear();
        set2.test_ids.clear();
        split_train_test(&mut set2, 0.8, 7).unwrap();
        assert_eq!(set.train_ids, set2.train_ids);
        assert_eq!(set.test_ids, set2.test_ids);

        let err = split_train_test(&mut set2, 1.0, 7).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn split_two_sequences_evenly() {
        let log = synth_dataset(2, 30, 5, 0.0, 1).unwrap();
        let mut set = build_sequences(&log, 3, 1, DEFAULT_WINDOW_SECONDS).unwrap();
        split_train_test(&mut set, 0.5, 3).unwrap();
        assert_eq!((set.train_ids.len(), set.test_ids.len()), (1, 1));
    }

    #[test]
    fn batches_cover_everything_with_partial_tail() {
        let batches = make_batches(10, 4, 5);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let single = make_batches(100, 256, 5);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].len(), 100);

        assert_eq!(make_batches(10, 4, 5), make_batches(10, 4, 5));
        assert_ne!(make_batches(10, 4, 5), make_batches(10, 4, 6));
    }

    /// With no noise, the successor of every emitted item is fixed: scan the
    /// log and verify the successor function.
    #[test]
    fn noiseless_synth_has_deterministic_successors() {
        let m = 17;
        let log = synth_dataset(12, m, 6, 0.0, 11).unwrap();
        let mut per_user: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
        for r in &log.records {
            per_user.entry(&r.user_id).or_default().push(r);
        }
        for recs in per_user.values() {
            for w in recs.windows(2) {
                let a: usize = w[0].item_id[1..].parse().unwrap();
                let b: usize = w[1].item_id[1..].parse().unwrap();
                assert_eq!(b, (a + 1) % m);
                assert!(w[1].timestamp > w[0].timestamp);
            }
        }
    }

    #[test]
    fn bundle_roundtrip() {
        let log = synth_dataset(6, 20, 5, 0.2, 2).unwrap();
        let mut set = build_sequences(&log, 3, 1, DEFAULT_WINDOW_SECONDS).unwrap();
        split_train_test(&mut set, 0.8, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&set, dir.path()).unwrap();
        let read = read_bundle(dir.path()).unwrap();
        assert_eq!(read.sequences, set.sequences);
        assert_eq!(read.train_ids, set.train_ids);
        assert_eq!(read.test_ids, set.test_ids);
        assert_eq!(read.m_items, set.m_items);
        assert_eq!(read.n_users, set.n_users);
        assert_eq!(read.user_vocab, set.user_vocab);
    }
}
