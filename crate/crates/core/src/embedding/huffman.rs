use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Binary Huffman code over the vocabulary.
///
/// Internal nodes are numbered `0..V-1` in creation order, so the root is
/// node `V-2`. For each token, `paths[t]` lists the internal nodes from the
/// root down to the leaf and `bits[t]` the branch taken at each of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    paths: Vec<Vec<u32>>,
    bits: Vec<Vec<u8>>,
}

impl HuffmanTree {
    /// Builds the tree from token counts. Ties are broken by node order:
    /// leaves by token index, then internal nodes by creation order. The
    /// first node popped at each merge takes bit 0.
    pub fn build(counts: &[u64]) -> Result<Self> {
        let v = counts.len();
        if v < 2 {
            return Err(Error::Config(format!(
                "hierarchical softmax needs at least 2 tokens, vocabulary has {v}"
            )));
        }
        // node ids: leaves 0..v, internal nodes v..2v-1
        let mut parent = vec![0usize; 2 * v - 1];
        let mut branch = vec![0u8; 2 * v - 1];
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
            counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
        let mut next = v;
        while heap.len() > 1 {
            let Reverse((c0, n0)) = heap.pop().unwrap();
            let Reverse((c1, n1)) = heap.pop().unwrap();
            parent[n0] = next;
            parent[n1] = next;
            branch[n0] = 0;
            branch[n1] = 1;
            heap.push(Reverse((c0.saturating_add(c1), next)));
            next += 1;
        }
        let root = 2 * v - 2;

        let mut paths = Vec::with_capacity(v);
        let mut bits = Vec::with_capacity(v);
        for leaf in 0..v {
            let mut path = Vec::new();
            let mut code = Vec::new();
            let mut node = leaf;
            while node != root {
                code.push(branch[node]);
                node = parent[node];
                path.push((node - v) as u32);
            }
            path.reverse();
            code.reverse();
            paths.push(path);
            bits.push(code);
        }
        Ok(HuffmanTree { paths, bits })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn internal_nodes(&self) -> usize {
        self.paths.len().saturating_sub(1)
    }

    pub fn path(&self, token: usize) -> &[u32] {
        &self.paths[token]
    }

    pub fn bits(&self, token: usize) -> &[u8] {
        &self.bits[token]
    }

    pub fn code_lengths(&self) -> Vec<usize> {
        self.paths.iter().map(Vec::len).collect()
    }
}
