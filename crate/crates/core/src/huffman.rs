//! Huffman coding tree for the hierarchical softmax.
//!
//! Leaves are terms; internal nodes are numbered `0..N-1` in creation order,
//! so the root is node `N-2`. Each term's path runs root to leaf and records
//! the branch taken at every internal node: `+1` for the left child and `-1`
//! for the right one.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::index::TermId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanTree {
    paths: Vec<Vec<PathStep>>,
    num_internal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    weight: f64,
    // leaves use their term id, internal nodes N + creation index
    key: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.weight.total_cmp(&other.weight).then(self.key.cmp(&other.key))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl HuffmanTree {
    /// Builds the tree by repeatedly merging the two lightest subtrees. Equal
    /// weights are broken by key: leaves before internal nodes, lower term ids
    /// first. The lighter subtree becomes the left child.
    pub fn build(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::EmptyVocabulary);
        }
        for (term, &weight) in weights.iter().enumerate() {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(Error::NonPositiveWeight { term, weight });
            }
        }
        if n == 1 {
            return Ok(HuffmanTree {
                paths: vec![Vec::new()],
                num_internal: 0,
            });
        }

        let mut heap: BinaryHeap<Reverse<HeapItem>> = weights
            .iter()
            .enumerate()
            .map(|(key, &weight)| Reverse(HeapItem { weight, key }))
            .collect();
        // children[i] = (left key, right key) of internal node i
        let mut children: Vec<(usize, usize)> = Vec::with_capacity(n - 1);
        while heap.len() > 1 {
            let Reverse(left) = heap.pop().unwrap();
            let Reverse(right) = heap.pop().unwrap();
            let node = children.len();
            children.push((left.key, right.key));
            heap.push(Reverse(HeapItem {
                weight: left.weight + right.weight,
                key: n + node,
            }));
        }

        let mut paths = vec![Vec::new(); n];
        let root = n - 2;
        let mut stack: Vec<(usize, Vec<PathStep>)> = vec![(root, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            let (l, r) = children[node];
            for (child, sign) in [(l, 1i8), (r, -1i8)] {
                let mut path = prefix.clone();
                path.push(PathStep { node, sign });
                if child < n {
                    paths[child] = path;
                } else {
                    stack.push((child - n, path));
                }
            }
        }
        Ok(HuffmanTree {
            paths,
            num_internal: n - 1,
        })
    }

    /// Rebuilds a tree from explicit paths, validating that they describe a
    /// full binary tree over `0..num_internal` internal nodes.
    pub fn from_paths(paths: Vec<Vec<PathStep>>) -> Result<Self> {
        let n = paths.len();
        if n == 0 {
            return Err(Error::EmptyVocabulary);
        }
        let num_internal = n - 1;
        let tree = HuffmanTree { paths, num_internal };
        for path in &tree.paths {
            if path.iter().any(|s| s.node >= num_internal || (s.sign != 1 && s.sign != -1)) {
                return Err(Error::InvalidArgument("path refers to an invalid node or sign".into()));
            }
        }
        let kraft: f64 = tree.paths.iter().map(|p| 0.5f64.powi(p.len() as i32)).sum();
        if (kraft - 1.0).abs() > 1e-12 || !tree.is_prefix_free() {
            return Err(Error::InvalidArgument("paths do not form a full prefix-free tree".into()));
        }
        Ok(tree)
    }

    pub fn num_leaves(&self) -> usize {
        self.paths.len()
    }

    pub fn num_internal(&self) -> usize {
        self.num_internal
    }

    pub fn path(&self, term: TermId) -> &[PathStep] {
        &self.paths[term]
    }

    pub fn paths(&self) -> &[Vec<PathStep>] {
        &self.paths
    }

    pub fn max_path_len(&self) -> usize {
        self.paths.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Codes read as branch sequences must not prefix each other.
    pub fn is_prefix_free(&self) -> bool {
        let mut codes: Vec<Vec<i8>> = self.paths.iter().map(|p| p.iter().map(|s| s.sign).collect()).collect();
        codes.sort();
        codes.windows(2).all(|w| !w[1].starts_with(&w[0]))
    }

    /// `node:sign` steps joined by spaces, e.g. `2:+ 1:- 0:+`.
    pub fn format_path(&self, term: TermId) -> String {
        self.paths[term]
            .iter()
            .map(|s| format!("{}:{}", s.node, if s.sign > 0 { '+' } else { '-' }))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_path(s: &str) -> std::result::Result<Vec<PathStep>, String> {
        s.split_whitespace()
            .map(|step| {
                let (node, sign) = step.split_once(':').ok_or_else(|| format!("bad path step `{step}`"))?;
                let node = node.parse().map_err(|_| format!("bad node id `{node}`"))?;
                let sign = match sign {
                    "+" => 1,
                    "-" => -1,
                    _ => return Err(format!("bad branch sign `{sign}`")),
                };
                Ok(PathStep { node, sign })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(tree: &HuffmanTree) -> Vec<usize> {
        tree.paths().iter().map(Vec::len).collect()
    }

    #[test]
    fn hand_built_example() {
        let tree = HuffmanTree::build(&[4.0, 2.0, 1.0, 1.0]).unwrap();
        assert_eq!(lens(&tree), vec![1, 2, 3, 3]);
        assert_eq!(tree.num_internal(), 3);
        // c and d merge first: c (lower id) goes left.
        assert_eq!(tree.path(2).last().unwrap().sign, 1);
        assert_eq!(tree.path(3).last().unwrap().sign, -1);
        assert_eq!(tree.path(0)[0].node, 2);
    }

    #[test]
    fn two_and_one_leaves() {
        let tree = HuffmanTree::build(&[1.0, 5.0]).unwrap();
        assert_eq!(lens(&tree), vec![1, 1]);
        let tree = HuffmanTree::build(&[3.0]).unwrap();
        assert_eq!(lens(&tree), vec![0]);
        assert_eq!(tree.num_internal(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(HuffmanTree::build(&[]), Err(Error::EmptyVocabulary)));
        assert!(matches!(
            HuffmanTree::build(&[1.0, 0.0]),
            Err(Error::NonPositiveWeight { term: 1, .. })
        ));
    }

    #[test]
    fn path_string_round_trip() {
        let tree = HuffmanTree::build(&[4.0, 2.0, 1.0, 1.0, 7.0, 3.0]).unwrap();
        let paths = (0..6)
            .map(|t| HuffmanTree::parse_path(&tree.format_path(t)).unwrap())
            .collect();
        assert_eq!(HuffmanTree::from_paths(paths).unwrap(), tree);
        assert!(HuffmanTree::from_paths(vec![vec![], vec![]]).is_err());
    }
}
