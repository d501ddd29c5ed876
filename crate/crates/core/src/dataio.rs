//! Text formats for labels, ground truth, and predictions.
//!
//! Label files are UTF-8 lines of `worker_id,item_id,label` with 1-based
//! positive integer ids, `#`-prefixed comment lines, and blank lines
//! ignored. External ids are densified to contiguous 0-based indices in
//! first-appearance order; the id maps are kept so predictions can be
//! written back under the original ids. Truth files are `item_id,label`
//! lines with the same conventions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ObservedLabels;

/// Bidirectional mapping between external file ids and dense internal
/// indices, in first-appearance order.
#[derive(Clone, Debug, Default)]
pub struct IdMaps {
    workers: Vec<u64>,
    items: Vec<u64>,
    worker_index: HashMap<u64, usize>,
    item_index: HashMap<u64, usize>,
}

impl IdMaps {
    /// The identity mapping for data that never came from a file: index
    /// `i` carries external id `i + 1`.
    pub fn dense(m: usize, n: usize) -> Self {
        let mut maps = Self::default();
        for id in 1..=m as u64 {
            maps.intern_worker(id);
        }
        for id in 1..=n as u64 {
            maps.intern_item(id);
        }
        maps
    }

    fn intern_worker(&mut self, id: u64) -> usize {
        *self.worker_index.entry(id).or_insert_with(|| {
            self.workers.push(id);
            self.workers.len() - 1
        })
    }

    fn intern_item(&mut self, id: u64) -> usize {
        *self.item_index.entry(id).or_insert_with(|| {
            self.items.push(id);
            self.items.len() - 1
        })
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn worker_id(&self, index: usize) -> u64 {
        self.workers[index]
    }

    pub fn item_id(&self, index: usize) -> u64 {
        self.items[index]
    }

    pub fn worker_of(&self, id: u64) -> Option<usize> {
        self.worker_index.get(&id).copied()
    }

    pub fn item_of(&self, id: u64) -> Option<usize> {
        self.item_index.get(&id).copied()
    }
}

/// Lines worth parsing: skips blanks and `#` comments, keeps 1-based line
/// numbers for error reporting.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(idx, line)| (idx + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

fn parse_fields<const N: usize>(line_no: usize, line: &str) -> Result<[u64; N]> {
    let mut out = [0u64; N];
    let mut count = 0;
    for field in line.split(',') {
        if count == N {
            return Err(Error::ParseError {
                line: line_no,
                msg: format!("expected {N} comma-separated fields, got more"),
            });
        }
        out[count] = field.trim().parse::<u64>().map_err(|_| Error::ParseError {
            line: line_no,
            msg: format!("'{}' is not a positive integer", field.trim()),
        })?;
        count += 1;
    }
    if count != N {
        return Err(Error::ParseError {
            line: line_no,
            msg: format!("expected {N} comma-separated fields, got {count}"),
        });
    }
    Ok(out)
}

fn check_id(line_no: usize, what: &str, id: u64) -> Result<()> {
    if id == 0 {
        return Err(Error::ParseError {
            line: line_no,
            msg: format!("{what} ids are 1-based, 0 is not valid"),
        });
    }
    Ok(())
}

/// Parses label text into a dataset over `k` classes plus the id maps.
pub fn parse_labels(text: &str, k: usize) -> Result<(ObservedLabels, IdMaps)> {
    let mut maps = IdMaps::default();
    let mut entries = Vec::new();
    for (line_no, line) in data_lines(text) {
        let [worker_id, item_id, label] = parse_fields::<3>(line_no, line)?;
        check_id(line_no, "worker", worker_id)?;
        check_id(line_no, "item", item_id)?;
        if label == 0 || label as usize > k {
            return Err(Error::LabelOutOfRange {
                worker: Some(worker_id as usize),
                item: item_id as usize,
                label: label as usize,
                k,
            });
        }
        let worker = maps.intern_worker(worker_id);
        let item = maps.intern_item(item_id);
        entries.push((worker, item, label as usize - 1));
    }
    let labels =
        ObservedLabels::new(maps.num_workers().max(1), maps.num_items().max(1), k, entries)?;
    Ok((labels, maps))
}

/// Reads and parses a label file; see [`parse_labels`].
pub fn read_labels(path: &Path, k: usize) -> Result<(ObservedLabels, IdMaps)> {
    parse_labels(&fs::read_to_string(path)?, k)
}

/// Parses truth text into external `(item_id, label)` pairs (both still
/// 1-based); duplicate item ids are rejected.
pub fn parse_truth(text: &str) -> Result<Vec<(u64, usize)>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line_no, line) in data_lines(text) {
        let [item_id, label] = parse_fields::<2>(line_no, line)?;
        check_id(line_no, "item", item_id)?;
        if seen.insert(item_id, line_no).is_some() {
            return Err(Error::ParseError {
                line: line_no,
                msg: format!("duplicate truth entry for item {item_id}"),
            });
        }
        out.push((item_id, label as usize));
    }
    Ok(out)
}

/// Reads and parses a truth file; see [`parse_truth`].
pub fn read_truth(path: &Path) -> Result<Vec<(u64, usize)>> {
    parse_truth(&fs::read_to_string(path)?)
}

/// Converts external truth pairs into a per-internal-item vector. Items
/// absent from the dataset are ignored; labels outside `1..=k` are
/// rejected.
pub fn truth_by_index(
    pairs: &[(u64, usize)],
    maps: &IdMaps,
    n: usize,
    k: usize,
) -> Result<Vec<Option<usize>>> {
    let mut truth = vec![None; n];
    for &(item_id, label) in pairs {
        if label == 0 || label > k {
            return Err(Error::LabelOutOfRange {
                worker: None,
                item: item_id as usize,
                label,
                k,
            });
        }
        if let Some(j) = maps.item_of(item_id) {
            truth[j] = Some(label - 1);
        }
    }
    Ok(truth)
}

/// Serializes a dataset back to label-file text under the given id maps
/// (or 1-based indices when absent); inverse of [`parse_labels`] up to
/// line order.
pub fn render_labels(labels: &ObservedLabels, maps: Option<&IdMaps>) -> String {
    let mut out = String::new();
    for (i, j, c) in labels.iter() {
        let (worker_id, item_id) = match maps {
            Some(maps) => (maps.worker_id(i), maps.item_id(j)),
            None => (i as u64 + 1, j as u64 + 1),
        };
        let _ = writeln!(out, "{worker_id},{item_id},{}", c + 1);
    }
    out
}

/// Writes a label file; see [`render_labels`].
pub fn write_labels(path: &Path, labels: &ObservedLabels, maps: Option<&IdMaps>) -> Result<()> {
    fs::write(path, render_labels(labels, maps))?;
    Ok(())
}

/// Serializes ground truth as `item_id,label` lines.
pub fn render_truth(truth: &[usize], maps: Option<&IdMaps>) -> String {
    let mut out = String::new();
    for (j, &label) in truth.iter().enumerate() {
        let item_id = match maps {
            Some(maps) => maps.item_id(j),
            None => j as u64 + 1,
        };
        let _ = writeln!(out, "{item_id},{}", label + 1);
    }
    out
}

/// Writes a truth file; see [`render_truth`].
pub fn write_truth(path: &Path, truth: &[usize], maps: Option<&IdMaps>) -> Result<()> {
    fs::write(path, render_truth(truth, maps))?;
    Ok(())
}

/// Serializes predictions (internal 0-based classes per item index) as
/// `item_id,label` lines under the id maps.
pub fn render_predictions(predictions: &[usize], maps: Option<&IdMaps>) -> String {
    render_truth(predictions, maps)
}

/// Writes a predictions file; see [`render_predictions`].
pub fn write_predictions(
    path: &Path,
    predictions: &[usize],
    maps: Option<&IdMaps>,
) -> Result<()> {
    fs::write(path, render_predictions(predictions, maps))?;
    Ok(())
}

/// Serializes the id maps themselves (`kind,external_id,index` lines) so
/// densified outputs can be traced back to the original ids.
pub fn render_id_maps(maps: &IdMaps) -> String {
    let mut out = String::new();
    for (index, id) in maps.workers.iter().enumerate() {
        let _ = writeln!(out, "worker,{id},{index}");
    }
    for (index, id) in maps.items.iter().enumerate() {
        let _ = writeln!(out, "item,{id},{index}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_triples() {
        let (labels, maps) = parse_labels("1,1,2\n2,1,1\n", 2).unwrap();
        assert_eq!(labels.num_workers(), 2);
        assert_eq!(labels.num_items(), 1);
        assert_eq!(labels.len(), 2);
        // Worker id 1 -> index 0, assigned label 2 -> class 1.
        assert_eq!(labels.worker_labels(0), &[(0, 1)]);
        assert_eq!(labels.worker_labels(1), &[(0, 0)]);
        assert_eq!(maps.worker_id(0), 1);
        assert_eq!(maps.item_of(1), Some(0));
    }

    #[test]
    fn comments_blanks_and_missing_trailing_newline() {
        let text = "# a comment\n\n1,1,1\n  \n2,1,2";
        let (labels, _) = parse_labels(text, 2).unwrap();
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn zero_label_is_out_of_range() {
        let err = parse_labels("1,1,0\n", 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 0, k: 2, .. }));
        let err = parse_labels("1,1,3\n", 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, k: 2, .. }));
        // A zero id, by contrast, is a structural parse error.
        let err = parse_labels("0,1,1\n", 2).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 1, .. }));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = parse_labels("1,1,1\nnot,a number,1\n", 2).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 2, .. }));
        let err = parse_labels("1,1\n", 2).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 1, .. }));
        let err = parse_labels("1,1,1,4\n", 2).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 1, .. }));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let err = parse_labels("1,1,1\n1,1,2\n", 2).unwrap_err();
        assert!(matches!(err, Error::DuplicateLabel { worker: 0, item: 0 }));
    }

    #[test]
    fn ids_densify_in_first_appearance_order() {
        let (_, maps) = parse_labels("7,100,1\n3,100,2\n7,5,1\n", 2).unwrap();
        assert_eq!(maps.worker_id(0), 7);
        assert_eq!(maps.worker_id(1), 3);
        assert_eq!(maps.item_id(0), 100);
        assert_eq!(maps.item_id(1), 5);
    }

    #[test]
    fn truth_round_trip_and_duplicates() {
        let pairs = parse_truth("1,2\n3,1\n").unwrap();
        assert_eq!(pairs, vec![(1, 2), (3, 1)]);
        let err = parse_truth("1,2\n1,1\n").unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 2, .. }));
    }

    #[test]
    fn truth_projection_ignores_unknown_items() {
        let (_, maps) = parse_labels("1,1,1\n1,2,2\n", 2).unwrap();
        let truth = truth_by_index(&[(1, 2), (9, 1)], &maps, 2, 2).unwrap();
        assert_eq!(truth, vec![Some(1), None]);
        let err = truth_by_index(&[(1, 3)], &maps, 2, 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { .. }));
    }

    #[test]
    fn label_round_trip_preserves_multiset() {
        let text = "4,10,2\n4,11,1\n9,10,1\n";
        let (labels, maps) = parse_labels(text, 2).unwrap();
        let rendered = render_labels(&labels, Some(&maps));
        let mut original: Vec<&str> = text.lines().collect();
        let mut round: Vec<&str> = rendered.lines().collect();
        original.sort_unstable();
        round.sort_unstable();
        assert_eq!(original, round);
    }

    #[test]
    fn predictions_use_external_ids() {
        let (_, maps) = parse_labels("1,42,1\n1,7,2\n", 2).unwrap();
        let rendered = render_predictions(&[1, 0], Some(&maps));
        assert_eq!(rendered, "42,2\n7,1\n");
    }
}
