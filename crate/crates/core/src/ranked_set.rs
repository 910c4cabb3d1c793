//! Order-statistics set of job ids.
//!
//! A treap whose priorities are a fixed hash of the key, stored in an arena.
//! The tree shape depends only on the key set, so two sets with the same
//! elements have the same layout up to arena slot numbering. Every node
//! carries its subtree size, which gives `O(log N)` rank and select.

use std::fmt;

use crate::error::{Result, SimError};

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    key: u32,
    prio: u64,
    left: u32,
    right: u32,
    size: u32,
}

fn priority(key: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = u64::from(key).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Default)]
pub struct RankedSet {
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
}

impl RankedSet {
    pub fn new() -> Self {
        RankedSet { nodes: Vec::new(), free: Vec::new(), root: NIL }
    }

    /// The set `{1, ..., n}`, built in linear time.
    pub fn from_range(n: u32) -> Self {
        Self::from_sorted((1..=n).collect::<Vec<_>>().as_slice())
    }

    /// Builds from strictly ascending keys in linear time (Cartesian tree
    /// construction over the hash priorities).
    pub fn from_sorted(keys: &[u32]) -> Self {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let mut set = RankedSet { nodes: Vec::with_capacity(keys.len()), free: Vec::new(), root: NIL };
        let mut spine: Vec<u32> = Vec::new();
        for &key in keys {
            let idx = set.alloc(key);
            let mut last = NIL;
            while let Some(&top) = spine.last() {
                if set.nodes[top as usize].prio < set.nodes[idx as usize].prio {
                    last = spine.pop().unwrap();
                } else {
                    break;
                }
            }
            set.nodes[idx as usize].left = last;
            if let Some(&top) = spine.last() {
                set.nodes[top as usize].right = idx;
            }
            spine.push(idx);
        }
        set.root = spine.first().copied().unwrap_or(NIL);
        set.fix_sizes(set.root);
        set
    }

    fn fix_sizes(&mut self, t: u32) -> u32 {
        if t == NIL {
            return 0;
        }
        let (l, r) = (self.nodes[t as usize].left, self.nodes[t as usize].right);
        let s = 1 + self.fix_sizes(l) + self.fix_sizes(r);
        self.nodes[t as usize].size = s;
        s
    }

    fn alloc(&mut self, key: u32) -> u32 {
        let node = Node { key, prio: priority(key), left: NIL, right: NIL, size: 1 };
        match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        }
    }

    #[inline]
    fn size_of(&self, t: u32) -> u32 {
        if t == NIL {
            0
        } else {
            self.nodes[t as usize].size
        }
    }

    #[inline]
    fn update(&mut self, t: u32) {
        let n = self.nodes[t as usize];
        self.nodes[t as usize].size = 1 + self.size_of(n.left) + self.size_of(n.right);
    }

    /// Splits `t` into keys `< key` and keys `>= key`.
    fn split(&mut self, t: u32, key: u32, ops: &mut u64) -> (u32, u32) {
        if t == NIL {
            return (NIL, NIL);
        }
        *ops += 1;
        if self.nodes[t as usize].key < key {
            let (l, r) = self.split(self.nodes[t as usize].right, key, ops);
            self.nodes[t as usize].right = l;
            self.update(t);
            (t, r)
        } else {
            let (l, r) = self.split(self.nodes[t as usize].left, key, ops);
            self.nodes[t as usize].left = r;
            self.update(t);
            (l, t)
        }
    }

    fn merge(&mut self, a: u32, b: u32, ops: &mut u64) -> u32 {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        *ops += 1;
        if self.nodes[a as usize].prio > self.nodes[b as usize].prio {
            let r = self.merge(self.nodes[a as usize].right, b, ops);
            self.nodes[a as usize].right = r;
            self.update(a);
            a
        } else {
            let l = self.merge(a, self.nodes[b as usize].left, ops);
            self.nodes[b as usize].left = l;
            self.update(b);
            b
        }
    }

    pub fn len(&self) -> usize {
        self.size_of(self.root) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.free.clear();
        self.root = NIL;
    }

    pub fn contains(&self, key: u32) -> bool {
        let mut t = self.root;
        while t != NIL {
            let n = &self.nodes[t as usize];
            if key == n.key {
                return true;
            }
            t = if key < n.key { n.left } else { n.right };
        }
        false
    }

    /// Inserts `key`; returns `false` if it was already present.
    pub fn insert(&mut self, key: u32) -> bool {
        if self.contains(key) {
            return false;
        }
        let mut ops = 0;
        let (l, r) = self.split(self.root, key, &mut ops);
        let node = self.alloc(key);
        let left = self.merge(l, node, &mut ops);
        self.root = self.merge(left, r, &mut ops);
        true
    }

    /// Removes `key`; returns `false` if it was absent.
    pub fn remove(&mut self, key: u32) -> bool {
        if !self.contains(key) {
            return false;
        }
        let mut ops = 0;
        let (l, rest) = self.split(self.root, key, &mut ops);
        let (mid, r) = self.split(rest, key.saturating_add(1), &mut ops);
        debug_assert!(mid != NIL && self.nodes[mid as usize].size == 1);
        self.free.push(mid);
        self.root = self.merge(l, r, &mut ops);
        true
    }

    /// 1-based rank of `key` if it is a member.
    fn position(&self, key: u32, ops: &mut u64) -> Option<usize> {
        let mut t = self.root;
        let mut before = 0usize;
        while t != NIL {
            *ops += 1;
            let n = &self.nodes[t as usize];
            if key < n.key {
                t = n.left;
            } else {
                let left = self.size_of(n.left) as usize;
                if key == n.key {
                    return Some(before + left + 1);
                }
                before += left + 1;
                t = n.right;
            }
        }
        None
    }

    /// The `k`-th smallest element (1-based).
    fn select(&self, mut k: usize, ops: &mut u64) -> Option<u32> {
        if k == 0 || k > self.len() {
            return None;
        }
        let mut t = self.root;
        while t != NIL {
            *ops += 1;
            let n = &self.nodes[t as usize];
            let left = self.size_of(n.left) as usize;
            if k <= left {
                t = n.left;
            } else if k == left + 1 {
                return Some(n.key);
            } else {
                k -= left + 1;
                t = n.right;
            }
        }
        None
    }

    /// The `i`-th smallest element of `self \ exclude` (1-based).
    pub fn select_excluding(&self, exclude: &RankedSet, i: usize) -> Result<u32> {
        self.select_excluding_counted(exclude, i).map(|(v, _)| v)
    }

    /// As [`select_excluding`](Self::select_excluding), also returning the
    /// number of tree nodes visited. Costs `O(|exclude| log N)`.
    ///
    /// Elements of `exclude` absent from `self` are ignored.
    pub fn select_excluding_counted(&self, exclude: &RankedSet, i: usize) -> Result<(u32, u64)> {
        let mut ops = 0u64;
        let mut k = i;
        let out_of_range =
            |ops: &mut u64| SimError::RankOutOfRange { rank: i, available: self.difference_len(exclude, ops) };
        if i == 0 {
            return Err(out_of_range(&mut ops));
        }
        for x in exclude.iter() {
            match self.position(x, &mut ops) {
                Some(r) if r <= k => k += 1,
                Some(_) => break,
                None => {}
            }
        }
        match self.select(k, &mut ops) {
            Some(v) => Ok((v, ops)),
            None => Err(out_of_range(&mut ops)),
        }
    }

    fn difference_len(&self, other: &RankedSet, ops: &mut u64) -> usize {
        let common = other.iter().filter(|&x| self.position(x, ops).is_some()).count();
        self.len() - common
    }

    /// `|self \ other|`, costing one membership test per element of `other`.
    pub fn len_excluding(&self, other: &RankedSet) -> usize {
        let mut ops = 0;
        self.difference_len(other, &mut ops)
    }

    /// Ascending elements of `self \ other`.
    pub fn difference(&self, other: &RankedSet) -> Vec<u32> {
        self.iter().filter(|&x| !other.contains(x)).collect()
    }

    pub fn iter(&self) -> Iter<'_> {
        let mut it = Iter { set: self, stack: Vec::new() };
        it.push_left(self.root);
        it
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.iter().collect()
    }

    /// Depth of the deepest leaf; for tests and benches.
    pub fn height(&self) -> usize {
        fn go(s: &RankedSet, t: u32) -> usize {
            if t == NIL {
                0
            } else {
                let n = &s.nodes[t as usize];
                1 + go(s, n.left).max(go(s, n.right))
            }
        }
        go(self, self.root)
    }
}

pub struct Iter<'a> {
    set: &'a RankedSet,
    stack: Vec<u32>,
}

impl Iter<'_> {
    fn push_left(&mut self, mut t: u32) {
        while t != NIL {
            self.stack.push(t);
            t = self.set.nodes[t as usize].left;
        }
    }
}

impl Iterator for Iter<'_> {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        let t = self.stack.pop()?;
        let n = self.set.nodes[t as usize];
        self.push_left(n.right);
        Some(n.key)
    }
}

impl<'a> IntoIterator for &'a RankedSet {
    type Item = u32;
    type IntoIter = Iter<'a>;

    fn into_iter(self) -> Iter<'a> {
        self.iter()
    }
}

impl FromIterator<u32> for RankedSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut s = RankedSet::new();
        for x in iter {
            s.insert(x);
        }
        s
    }
}

impl PartialEq for RankedSet {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().eq(other.iter())
    }
}

impl Eq for RankedSet {}

impl fmt::Debug for RankedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
