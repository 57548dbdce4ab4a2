//! Adjacency-list split files: one line per user, `user_id item_id item_id …`.
//!
//! A dataset directory holds `train.txt` and `test.txt`. Lines starting with
//! `#` are comments, except an optional `# users=N items=M` header that fixes
//! the id spaces when trailing ids are unused.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::EvalSplit;
use crate::graph::InteractionMatrix;
use crate::vgae::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    /// Train plus retained test interactions.
    pub n_interactions: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub density: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>10} {:>10} {:>14} {:>10.5}",
            group_thousands(self.n_users),
            group_thousands(self.n_items),
            group_thousands(self.n_interactions),
            self.density
        )
    }
}

pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (k, c) in s.chars().enumerate() {
        if k > 0 && (s.len() - k) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub train: InteractionMatrix,
    /// Sorted held-out items per user, one list per user.
    pub test: Vec<Vec<usize>>,
    /// Test interactions dropped because their user has no train line or the
    /// pair also appears in train.
    pub dropped_test: usize,
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    pub fn stats(&self) -> DatasetStats {
        let n_train = self.train.nnz();
        let n_test: usize = self.test.iter().map(Vec::len).sum();
        let n_interactions = n_train + n_test;
        let cells = self.n_users() as f64 * self.n_items() as f64;
        DatasetStats {
            n_users: self.n_users(),
            n_items: self.n_items(),
            n_interactions,
            n_train,
            n_test,
            density: if cells > 0.0 { n_interactions as f64 / cells } else { 0.0 },
        }
    }

    pub fn eval_split(&self) -> Result<EvalSplit> {
        EvalSplit::new(self.train.clone(), self.test.clone())
    }

    /// Moves a seeded `fraction` of every user's training items (at least one
    /// when the user has two or more) into a validation set. The test split is
    /// not touched.
    pub fn validation_split(&self, fraction: f64, seed: u64) -> Result<EvalSplit> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
        }
        let mut rng = stream_rng(seed, 7);
        let mut train = Vec::with_capacity(self.n_users());
        let mut valid = Vec::with_capacity(self.n_users());
        for u in 0..self.n_users() {
            let (t, v) = holdout(self.train.items_of(u), fraction, &mut rng);
            train.push(t);
            valid.push(v);
        }
        EvalSplit::new(InteractionMatrix::from_user_lists(self.n_items(), train)?, valid)
    }
}

/// Splits `items` into (kept, held out) with `round(fraction·n)` held out,
/// clamped to `[1, n − 1]`; users with fewer than two items keep everything.
pub(crate) fn holdout<R: rand::Rng + ?Sized>(items: &[usize], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let n = items.len();
    if n < 2 {
        return (items.to_vec(), Vec::new());
    }
    let n_out = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let mut out = shuffled.split_off(n - n_out);
    shuffled.sort_unstable();
    out.sort_unstable();
    (shuffled, out)
}

/// Parsed split file: explicit size header (if any) and `(user, items)` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjacencyLists {
    pub header: Option<(usize, usize)>,
    pub lines: Vec<(usize, Vec<usize>)>,
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut users = None;
    let mut items = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("users=") {
            users = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("items=") {
            items = v.parse().ok();
        }
    }
    Some((users?, items?))
}

pub fn parse_adjacency(text: &str) -> Result<AdjacencyLists> {
    let mut out = AdjacencyLists::default();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if out.header.is_none() {
                out.header = parse_header(line);
            }
            continue;
        }
        let mut ids = line.split_whitespace().map(|tok| {
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: k + 1,
                message: format!("expected a non-negative integer id, found {tok:?}"),
            })
        });
        let user = ids.next().expect("non-empty line")?;
        let items = ids.collect::<Result<Vec<_>>>()?;
        out.lines.push((user, items));
    }
    Ok(out)
}

/// Builds a split from parsed train and test lists.
pub fn split_from_lists(name: &str, train: &AdjacencyLists, test: &AdjacencyLists) -> Result<DatasetSplit> {
    if train.lines.is_empty() {
        return Err(Error::Empty("training file has no user lines".into()));
    }
    let max_id = |lists: &AdjacencyLists, pick: &dyn Fn(&(usize, Vec<usize>)) -> Option<usize>| {
        lists.lines.iter().filter_map(pick).max().map_or(0, |m| m + 1)
    };
    let mut n_users = max_id(train, &|(u, _)| Some(*u));
    let mut n_items = max_id(train, &|(_, it)| it.iter().copied().max()).max(max_id(test, &|(_, it)| it.iter().copied().max()));
    for h in [train.header, test.header].into_iter().flatten() {
        n_users = n_users.max(h.0);
        n_items = n_items.max(h.1);
    }

    let mut lists = vec![Vec::new(); n_users];
    let mut listed = vec![false; n_users];
    for (u, items) in &train.lines {
        listed[*u] = true;
        lists[*u].extend_from_slice(items);
    }
    let train_matrix = InteractionMatrix::from_user_lists(n_items, lists)?;

    let mut test_lists = vec![Vec::new(); n_users];
    let mut dropped = 0;
    for (u, items) in &test.lines {
        if *u >= n_users || !listed[*u] {
            dropped += items.len();
            continue;
        }
        for &i in items {
            if train_matrix.contains(*u, i) {
                dropped += 1;
            } else {
                test_lists[*u].push(i);
            }
        }
    }
    for t in &mut test_lists {
        t.sort_unstable();
        let before = t.len();
        t.dedup();
        dropped += before - t.len();
    }
    Ok(DatasetSplit {
        name: name.to_string(),
        train: train_matrix,
        test: test_lists,
        dropped_test: dropped,
    })
}

pub fn load_split(train_path: impl AsRef<Path>, test_path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let train_path = train_path.as_ref();
    let name = train_path
        .parent()
        .and_then(Path::file_name)
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
    let train = parse_adjacency(&fs::read_to_string(train_path)?)?;
    let test = parse_adjacency(&fs::read_to_string(test_path)?)?;
    split_from_lists(&name, &train, &test)
}

/// Loads `dir/train.txt` and `dir/test.txt`.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    load_split(dir.join("train.txt"), dir.join("test.txt"))
}

pub fn format_lists(n_users: usize, n_items: usize, lists: &[Vec<usize>]) -> String {
    let mut out = format!("# users={n_users} items={n_items}\n");
    for (u, items) in lists.iter().enumerate() {
        out.push_str(&u.to_string());
        for i in items {
            out.push(' ');
            out.push_str(&i.to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes `train.txt` and `test.txt` under `dir` (created if missing).
pub fn write_split(ds: &DatasetSplit, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (n, m) = (ds.n_users(), ds.n_items());
    fs::write(dir.join("train.txt"), format_lists(n, m, ds.train.user_lists()))?;
    fs::write(dir.join("test.txt"), format_lists(n, m, &ds.test))?;
    Ok(())
}

/// Renumbers users and items densely, dropping ids with no interaction in
/// either split. Returns the compacted split and the old→new maps.
pub fn compact(ds: &DatasetSplit) -> Result<(DatasetSplit, Vec<Option<usize>>, Vec<Option<usize>>)> {
    let mut user_used = vec![false; ds.n_users()];
    let mut item_used = vec![false; ds.n_items()];
    for u in 0..ds.n_users() {
        for &i in ds.train.items_of(u).iter().chain(&ds.test[u]) {
            user_used[u] = true;
            item_used[i] = true;
        }
    }
    let renumber = |used: &[bool]| {
        let mut next = 0;
        used.iter()
            .map(|&k| {
                k.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect::<Vec<Option<usize>>>()
    };
    let user_map = renumber(&user_used);
    let item_map = renumber(&item_used);
    let n_items = item_map.iter().flatten().count();
    let remap = |items: &[usize]| items.iter().map(|&i| item_map[i].expect("used item")).collect::<Vec<_>>();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for u in (0..ds.n_users()).filter(|&u| user_used[u]) {
        train.push(remap(ds.train.items_of(u)));
        test.push(remap(&ds.test[u]));
    }
    let split = DatasetSplit {
        name: ds.name.clone(),
        train: InteractionMatrix::from_user_lists(n_items, train)?,
        test,
        dropped_test: ds.dropped_test,
    };
    Ok((split, user_map, item_map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists(text: &str) -> AdjacencyLists {
        parse_adjacency(text).unwrap()
    }

    #[test]
    fn toy_file() {
        let ds = split_from_lists("toy", &lists("0 1 2\n1 0\n"), &lists("")).unwrap();
        assert_eq!((ds.n_users(), ds.n_items(), ds.train.nnz()), (2, 3, 3));
    }

    #[test]
    fn user_without_items_is_accepted() {
        let ds = split_from_lists("t", &lists("0\n1 4\n"), &lists("0 2\n")).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 5);
        assert!(ds.train.items_of(0).is_empty());
        assert_eq!(ds.test[0], vec![2]);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        match parse_adjacency("0 1\n1 x 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(split_from_lists("e", &lists(""), &lists("0 1")), Err(Error::Empty(_))));
    }

    #[test]
    fn unknown_test_users_are_dropped_and_counted() {
        let ds = split_from_lists("t", &lists("0 0\n2 1\n"), &lists("1 0 1\n5 1\n0 0 1\n")).unwrap();
        assert_eq!(ds.test, vec![vec![1], vec![], vec![]]);
        assert_eq!(ds.dropped_test, 4);
    }

    #[test]
    fn stats_and_density() {
        let ds = split_from_lists("t", &lists("0 0 1\n1 2\n"), &lists("0 2\n1 0\n")).unwrap();
        let s = ds.stats();
        assert_eq!((s.n_users, s.n_items, s.n_interactions), (2, 3, 5));
        assert!((s.density - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(group_thousands(1027370), "1,027,370");
        assert_eq!(group_thousands(981), "981");
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let train = InteractionMatrix::from_user_lists(9, vec![vec![0, 3], vec![], vec![1]]).unwrap();
        let ds = DatasetSplit {
            name: dir.path().file_name().unwrap().to_string_lossy().into_owned(),
            train,
            test: vec![vec![4], vec![2], vec![]],
            dropped_test: 0,
        };
        write_split(&ds, dir.path()).unwrap();
        assert_eq!(load_dir(dir.path()).unwrap(), ds);
    }

    #[test]
    fn compact_removes_unused_ids() {
        let ds = split_from_lists("t", &lists("0 5\n3 1 5\n"), &lists("3 2\n")).unwrap();
        let (c, users, items) = compact(&ds).unwrap();
        assert_eq!((c.n_users(), c.n_items()), (2, 3));
        assert_eq!(users, vec![Some(0), None, None, Some(1)]);
        assert_eq!(items[5], Some(2));
        assert_eq!(c.test[1], vec![1]);
        assert_eq!(c.stats().n_interactions, ds.stats().n_interactions);
    }

    #[test]
    fn validation_split_keeps_one_train_item() {
        let ds = split_from_lists("t", &lists("0 0 1 2 3 4 5 6 7 8 9\n1 3\n"), &lists("")).unwrap();
        let v = ds.validation_split(0.2, 1).unwrap();
        assert_eq!(v.test[0].len(), 2);
        assert_eq!(v.train.items_of(0).len(), 8);
        assert_eq!(v.train.items_of(1), &[3]);
        assert!(v.test[1].is_empty());
    }
}
