//! Infinite-depth context tree weighting.
//!
//! Each node carries Krichevsky–Trofimov counts for its context and the two
//! log-domain quantities of the weighting recursion: the KT likelihood
//! `Pe` of the symbols seen at this context and the weighted likelihood
//! `Pw = 1/2 Pe + 1/2 Π_children Pw` (a node with no children has
//! `Pw = Pe`). The per-symbol code length of the root's `Pw` estimates the
//! entropy rate.
//!
//! Infinite depth is realized by path compression: a context that has been
//! visited exactly once is a leaf holding the position of that visit. The
//! implied chain of deeper once-visited contexts all share the closed form
//! `Pw = Pe = 1/m` (the recursion `W = 1/(2m) + W/2` has fixed point `1/m`,
//! and a finite chain terminated by a childless node reaches the same
//! value), so nothing below the leaf needs to be materialized until a second
//! visit splits it.

use crate::partitions::SymbolSequence;
use crate::{Error, Result};

use super::{EntropyEstimate, EstimatorKind};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    log_pe: f64,
    log_pw: f64,
    /// Sum of the log Pw of existing children.
    log_children: f64,
    /// Offset of this node's counts in the counts arena.
    counts_at: u32,
    /// Offset of this node's child table, NONE while the node has no
    /// children.
    children_at: u32,
    /// Position of the single visit for compressed leaves, else NONE.
    tail_pos: u32,
}

/// Sequential infinite-depth CTW over an m-ary alphabet.
#[derive(Debug)]
pub struct CtwTree {
    m: usize,
    nodes: Vec<Node>,
    counts: Vec<u32>,
    children: Vec<u32>,
    seq: Vec<u8>,
    log_half: f64,
    log_inv_m: f64,
}

impl CtwTree {
    pub fn new(alphabet_size: u16) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::Alphabet("ctw needs an alphabet of size >= 2".into()));
        }
        let m = alphabet_size as usize;
        let mut tree = CtwTree {
            m,
            nodes: Vec::new(),
            counts: Vec::new(),
            children: Vec::new(),
            seq: Vec::new(),
            log_half: 0.5f64.ln(),
            log_inv_m: -(m as f64).ln(),
        };
        tree.alloc_node(NONE); // root
        tree
            .nodes
            .reserve(1024);
        Ok(tree)
    }

    pub fn alphabet_size(&self) -> u16 {
        self.m as u16
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Total code length of the processed sequence in bits,
    /// `-log2 Pw(root)`.
    pub fn code_length_bits(&self) -> f64 {
        -self.nodes[0].log_pw / std::f64::consts::LN_2
    }

    /// Code length of the memoryless KT model alone (the root's Pe); the
    /// weighted mixture can never be worse than this.
    pub fn root_kt_bits(&self) -> f64 {
        -self.nodes[0].log_pe / std::f64::consts::LN_2
    }

    /// Number of materialized tree nodes (diagnostics).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn alloc_node(&mut self, tail_pos: u32) -> u32 {
        let id = self.nodes.len() as u32;
        let counts_at = self.counts.len() as u32;
        self.counts.resize(self.counts.len() + self.m, 0);
        self.nodes.push(Node {
            log_pe: 0.0,
            log_pw: 0.0,
            log_children: 0.0,
            counts_at,
            children_at: NONE,
            tail_pos,
        });
        id
    }

    fn alloc_children(&mut self, node: u32) {
        let at = self.children.len() as u32;
        self.children.resize(self.children.len() + self.m, NONE);
        self.nodes[node as usize].children_at = at;
    }

    fn child(&self, node: u32, sym: u8) -> u32 {
        let at = self.nodes[node as usize].children_at;
        if at == NONE {
            NONE
        } else {
            self.children[at as usize + sym as usize]
        }
    }

    fn set_child(&mut self, node: u32, sym: u8, value: u32) {
        if self.nodes[node as usize].children_at == NONE {
            self.alloc_children(node);
        }
        let at = self.nodes[node as usize].children_at;
        self.children[at as usize + sym as usize] = value;
    }

    /// Fresh compressed leaf observing `sym` once at position `pos`.
    fn alloc_leaf(&mut self, sym: u8, pos: u32) -> u32 {
        let id = self.alloc_node(pos);
        let n = &mut self.nodes[id as usize];
        n.log_pe = self.log_inv_m;
        n.log_pw = self.log_inv_m;
        self.counts[n.counts_at as usize + sym as usize] = 1;
        id
    }

    #[inline]
    fn log_kt(&self, node: u32, sym: u8) -> f64 {
        let at = self.nodes[node as usize].counts_at as usize;
        let count = self.counts[at + sym as usize] as f64;
        let total: u32 = self.counts[at..at + self.m].iter().sum();
        ((count + 0.5) / (total as f64 + self.m as f64 * 0.5)).ln()
    }

    #[inline]
    fn bump_count(&mut self, node: u32, sym: u8) {
        let at = self.nodes[node as usize].counts_at as usize;
        self.counts[at + sym as usize] += 1;
    }

    /// Process one symbol. Returns the code length of this symbol in bits.
    pub fn update(&mut self, sym: u8) -> Result<f64> {
        if (sym as usize) >= self.m {
            return Err(Error::Alphabet(format!(
                "symbol {sym} outside alphabet of size {}",
                self.m
            )));
        }
        let before = self.nodes[0].log_pw;
        let t = self.seq.len();

        // Walk down the current context until a compressed leaf, a missing
        // child, or the start of the sequence.
        let mut path: Vec<u32> = Vec::with_capacity(48);
        let mut node = 0u32;
        let mut depth = 0usize;
        // (old Pw, new Pw) of the node below the deepest path entry
        let mut below: Option<(f64, f64)>;
        loop {
            let is_leaf = self.nodes[node as usize].tail_pos != NONE;
            path.push(node);
            if is_leaf {
                below = Some(self.split_leaf(node, depth, t, sym));
                break;
            }
            if depth == t {
                below = None;
                break;
            }
            let ctx = self.seq[t - 1 - depth];
            let next = self.child(node, ctx);
            if next == NONE {
                let leaf = self.alloc_leaf(sym, t as u32);
                self.set_child(node, ctx, leaf);
                below = Some((0.0, self.log_inv_m));
                break;
            }
            node = next;
            depth += 1;
        }

        // Bottom-up update of Pe, counts and Pw along the walked path.
        for &n in path.iter().rev() {
            let kt = self.log_kt(n, sym);
            self.bump_count(n, sym);
            let nd = &mut self.nodes[n as usize];
            nd.log_pe += kt;
            if let Some((old, new)) = below {
                nd.log_children += new - old;
            }
            let old_pw = nd.log_pw;
            nd.log_pw = if nd.children_at == NONE {
                nd.log_pe
            } else {
                log_mix_half(self.log_half + nd.log_pe, self.log_half + nd.log_children)
            };
            below = Some((old_pw, nd.log_pw));
        }

        self.seq.push(sym);
        Ok((before - self.nodes[0].log_pw) / std::f64::consts::LN_2)
    }

    /// Second visit to a compressed leaf: materialize the shared part of the
    /// stored and current contexts as real chain nodes, then hang fresh
    /// leaves for the two diverging tails. Returns the (old, new) log Pw of
    /// the leaf's replacement subtree contribution seen by its parent —
    /// handled by the caller's generic pass, so here we return the (old,
    /// new) contribution of the node BELOW the leaf (its first chain child
    /// or direct new leaves).
    fn split_leaf(&mut self, leaf: u32, depth: usize, t: usize, sym: u8) -> (f64, f64) {
        let p = self.nodes[leaf as usize].tail_pos as usize;
        self.nodes[leaf as usize].tail_pos = NONE;
        let prior_sym = self.seq[p];

        // Length of the shared deeper context, capped by the stored
        // context's reach back to the sequence start.
        let mut l = 0usize;
        loop {
            let sp = p as i64 - 1 - depth as i64 - l as i64;
            let st = t as i64 - 1 - depth as i64 - l as i64;
            if sp < 0 {
                break;
            }
            debug_assert!(st >= 0, "current context exhausted before stored");
            if self.seq[sp as usize] != self.seq[st as usize] {
                break;
            }
            l += 1;
        }
        let stored_continues = (p as i64 - 1 - depth as i64 - l as i64) >= 0;
        let current_ctx_sym = {
            let st = t as i64 - 1 - depth as i64 - l as i64;
            debug_assert!(st >= 0);
            self.seq[st as usize]
        };

        // Materialize chain nodes under the leaf; every one saw the stored
        // occurrence once (count of prior_sym, Pe = Pw = 1/m).
        let mut parent = leaf;
        for j in 0..l {
            let chain = self.alloc_node(NONE);
            {
                let nd = &mut self.nodes[chain as usize];
                nd.log_pe = self.log_inv_m;
                nd.log_pw = self.log_inv_m;
            }
            let at = self.nodes[chain as usize].counts_at as usize;
            self.counts[at + prior_sym as usize] = 1;
            let ctx = self.seq[t - 1 - depth - j];
            self.set_child(parent, ctx, chain);
            // the chain child is this node's only child so far
            self.nodes[parent as usize].log_children = self.log_inv_m;
            parent = chain;
        }

        // Diverging tails below the last shared node.
        if stored_continues {
            let stored_ctx_sym = self.seq[(p as i64 - 1 - depth as i64 - l as i64) as usize];
            let stored_leaf = self.alloc_leaf(prior_sym, p as u32);
            self.set_child(parent, stored_ctx_sym, stored_leaf);
            self.nodes[parent as usize].log_children = self.log_inv_m;
        } else if l > 0 {
            // terminal chain node keeps only what the update pass adds
            self.nodes[parent as usize].log_children = 0.0;
        }
        let current_leaf = self.alloc_leaf(sym, t as u32);
        self.set_child(parent, current_ctx_sym, current_leaf);

        // Bottom-up pass over the materialized chain (the leaf itself is on
        // the caller's path and handled there).
        let mut below = (0.0, self.log_inv_m); // fresh current-side leaf
        let mut chain_node = parent;
        for _ in 0..l {
            let kt = self.log_kt(chain_node, sym);
            self.bump_count(chain_node, sym);
            let nd = &mut self.nodes[chain_node as usize];
            nd.log_pe += kt;
            nd.log_children += below.1 - below.0;
            let old_pw = nd.log_pw;
            nd.log_pw = log_mix_half(self.log_half + nd.log_pe, self.log_half + nd.log_children);
            below = (old_pw, nd.log_pw);
            // move to the parent within the chain
            chain_node = self.parent_of_chain(leaf, chain_node, depth, t);
        }

        // `leaf` itself now has children; initialize its children product
        // with the subtree below (delta applied by the caller).
        if l == 0 {
            // children hang directly off the leaf
            let stored_part = if stored_continues { self.log_inv_m } else { 0.0 };
            self.nodes[leaf as usize].log_children = stored_part;
        }
        below
    }

    /// Walk the chain from `leaf` to find the parent of `target`; chains are
    /// short (expected O(1) for mixing sources), so a re-walk is cheaper
    /// than storing back-pointers.
    fn parent_of_chain(&self, leaf: u32, target: u32, depth: usize, t: usize) -> u32 {
        if target == leaf {
            return leaf;
        }
        let mut node = leaf;
        let mut j = 0usize;
        loop {
            let ctx = self.seq[t - 1 - depth - j];
            let next = self.child(node, ctx);
            if next == target {
                return node;
            }
            debug_assert!(next != NONE, "chain walk fell off");
            node = next;
            j += 1;
        }
    }

    /// Feed a whole sequence through a fresh tree and return the per-symbol
    /// rate estimate.
    pub fn estimate(s: &SymbolSequence) -> Result<EntropyEstimate> {
        if s.len() < 100 {
            return Err(Error::contract(format!(
                "ctw estimate needs length >= 100, got {}",
                s.len()
            )));
        }
        let mut tree = CtwTree::new(s.alphabet_size())?;
        for &sym in s.symbols() {
            tree.update(sym)?;
        }
        Ok(EntropyEstimate {
            value_bits: tree.code_length_bits() / s.len() as f64,
            stderr_bits: 0.0,
            method: EstimatorKind::Ctw,
            n: s.len(),
            undersampled: false,
        })
    }
}

/// log(1/2 e^a + 1/2 e^b) given a' = log(1/2) + a and b' = log(1/2) + b.
#[inline]
fn log_mix_half(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Convenience wrapper matching the estimator interface.
pub fn ctw_entropy_rate(s: &SymbolSequence) -> Result<EntropyEstimate> {
    CtwTree::estimate(s)
}
