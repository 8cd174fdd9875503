//! Draft construction: frequency-weighted trie over retrieved continuations,
//! top-`c` subtree selection, and flattening into the pseudo-sequence that a
//! model verifies in one pass.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::retrieval::ContinuationSet;
use crate::token::TokenId;

/// Prefix tree over continuation candidates. Each node's weight counts how
/// many candidates have that node's root path as a prefix.
#[derive(Debug, Clone)]
pub struct Trie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone)]
struct TrieNode {
    token: TokenId,
    weight: u32,
    depth: u32,
    /// `(token, node index)`, kept sorted by token.
    children: Vec<(TokenId, usize)>,
}

const ROOT: usize = 0;

impl Trie {
    fn new() -> Self {
        Trie {
            nodes: vec![TrieNode {
                token: 0,
                weight: 0,
                depth: 0,
                children: Vec::new(),
            }],
        }
    }

    fn insert(&mut self, sequence: &[TokenId]) {
        self.nodes[ROOT].weight += 1;
        let mut node = ROOT;
        for &token in sequence {
            let next = match self.nodes[node]
                .children
                .binary_search_by_key(&token, |c| c.0)
            {
                Ok(i) => self.nodes[node].children[i].1,
                Err(i) => {
                    let depth = self.nodes[node].depth + 1;
                    let new = self.nodes.len();
                    self.nodes.push(TrieNode {
                        token,
                        weight: 0,
                        depth,
                        children: Vec::new(),
                    });
                    self.nodes[node].children.insert(i, (token, new));
                    new
                }
            };
            self.nodes[next].weight += 1;
            node = next;
        }
    }

    /// Number of nodes excluding the virtual root.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `(root path, weight, depth)` for every non-root node, in depth-first
    /// order. Mostly useful for inspection and tests.
    pub fn iter_nodes(&self) -> Vec<(Vec<TokenId>, u32, u32)> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut stack: Vec<(usize, Vec<TokenId>)> = vec![(ROOT, Vec::new())];
        while let Some((idx, path)) = stack.pop() {
            if idx != ROOT {
                out.push((path.clone(), self.nodes[idx].weight, self.nodes[idx].depth));
            }
            for &(token, child) in self.nodes[idx].children.iter().rev() {
                let mut child_path = path.clone();
                child_path.push(token);
                stack.push((child, child_path));
            }
        }
        out
    }
}

/// Build the weighted trie over all continuations in `set`. Empty
/// continuations contribute nothing beyond the root.
pub fn build_trie(set: &ContinuationSet) -> Trie {
    let mut trie = Trie::new();
    for continuation in &set.continuations {
        trie.insert(continuation);
    }
    trie
}

/// Selection priority: weight descending, then depth ascending, then token id
/// ascending, then root path lexicographic. Children are visited in token
/// order, so a node's depth-first preorder index sorts exactly like its root
/// path and the final tie-break is a single integer comparison. Preorder
/// indices are unique, so this is a strict total order and selection is fully
/// deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Priority {
    weight: u32,
    depth: u32,
    token: TokenId,
    preorder: u32,
    node: usize,
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .cmp(&other.weight)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.token.cmp(&self.token))
            .then_with(|| other.preorder.cmp(&self.preorder))
    }
}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The selected ancestor-closed subtree. Node 0 is the virtual root and does
/// not count against the budget.
#[derive(Debug, Clone)]
pub struct DraftTree {
    nodes: Vec<DraftNode>,
}

#[derive(Debug, Clone)]
struct DraftNode {
    token: TokenId,
    depth: u32,
    children: Vec<usize>, // token-sorted, like the trie
}

impl DraftTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Keep the `c` highest-priority trie nodes. A min-heap over `Priority`
/// evicts the weakest node whenever the budget is exceeded; since a parent
/// always outranks its children (its weight is no smaller and its depth is
/// smaller), the survivors are automatically ancestor-closed.
pub fn select_top_c(trie: &Trie, c: usize) -> DraftTree {
    let mut selected = vec![false; trie.nodes.len()];
    if c > 0 {
        let mut heap: BinaryHeap<std::cmp::Reverse<Priority>> = BinaryHeap::with_capacity(c + 1);
        // Depth-first with children pushed in reverse, so nodes pop in token
        // order and the preorder counter realizes the path tie-break.
        let mut stack: Vec<usize> = child_indices_reversed(trie, ROOT);
        let mut preorder = 0u32;
        while let Some(idx) = stack.pop() {
            let node = &trie.nodes[idx];
            stack.extend(node.children.iter().rev().map(|&(_, child)| child));
            heap.push(std::cmp::Reverse(Priority {
                weight: node.weight,
                depth: node.depth,
                token: node.token,
                preorder,
                node: idx,
            }));
            preorder += 1;
            if heap.len() > c {
                heap.pop();
            }
        }
        for std::cmp::Reverse(p) in heap {
            selected[p.node] = true;
        }
    }

    // Rebuild the surviving subtree; the parent is always present because it
    // always outranks the child.
    let mut nodes = vec![DraftNode {
        token: 0,
        depth: 0,
        children: Vec::new(),
    }];
    let mut stack: Vec<(usize, usize)> = trie.nodes[ROOT]
        .children
        .iter()
        .rev()
        .map(|&(_, child)| (child, ROOT))
        .collect();
    while let Some((idx, draft_parent)) = stack.pop() {
        if !selected[idx] {
            continue;
        }
        let node = &trie.nodes[idx];
        let draft_idx = nodes.len();
        nodes.push(DraftNode {
            token: node.token,
            depth: node.depth,
            children: Vec::new(),
        });
        nodes[draft_parent].children.push(draft_idx);
        stack.extend(
            node.children
                .iter()
                .rev()
                .map(|&(_, child)| (child, draft_idx)),
        );
    }

    DraftTree { nodes }
}

fn child_indices_reversed(trie: &Trie, idx: usize) -> Vec<usize> {
    trie.nodes[idx]
        .children
        .iter()
        .rev()
        .map(|&(_, child)| child)
        .collect()
}

/// Root marker in [`DraftBuffer::parents`].
pub const ROOT_PARENT: Option<usize> = None;

/// The flattened pseudo-sequence: draft tokens in breadth-first order with
/// parent links and depths. Position `i` attends to exactly its root path,
/// which is recoverable from the parent links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DraftBuffer {
    tokens: Vec<TokenId>,
    parent: Vec<Option<usize>>,
    depth: Vec<u32>,
}

impl DraftBuffer {
    pub fn empty() -> Self {
        DraftBuffer::default()
    }

    /// Assemble a buffer directly from `(token, parent, depth)` triples.
    /// Panics if the links are not topologically ordered (`parent[i] < i`).
    pub fn from_parts(tokens: Vec<TokenId>, parent: Vec<Option<usize>>, depth: Vec<u32>) -> Self {
        assert_eq!(tokens.len(), parent.len());
        assert_eq!(tokens.len(), depth.len());
        for (i, p) in parent.iter().enumerate() {
            match p {
                None => assert_eq!(depth[i], 1, "root children have depth 1"),
                Some(p) => {
                    assert!(*p < i, "parent links must point backwards");
                    assert_eq!(depth[i], depth[*p] + 1);
                }
            }
        }
        DraftBuffer {
            tokens,
            parent,
            depth,
        }
    }

    /// Independent root-to-leaf chains, one per sequence. Shared prefixes are
    /// deliberately not merged; this is the naive layout the trie avoids.
    pub fn from_chains<S: AsRef<[TokenId]>>(sequences: &[S]) -> Self {
        let mut buffer = DraftBuffer::empty();
        for seq in sequences {
            let mut parent = ROOT_PARENT;
            for (d, &token) in seq.as_ref().iter().enumerate() {
                buffer.tokens.push(token);
                buffer.parent.push(parent);
                buffer.depth.push(d as u32 + 1);
                parent = Some(buffer.tokens.len() - 1);
            }
        }
        buffer
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn depth(&self, i: usize) -> u32 {
        self.depth[i]
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    /// True iff `j == i` or `j` is an ancestor of `i`: the tree-attention
    /// visibility relation.
    pub fn attends(&self, i: usize, j: usize) -> bool {
        let mut cur = i;
        loop {
            if cur == j {
                return true;
            }
            match self.parent[cur] {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Tokens on the path from the root down to and including `i`.
    pub fn root_path(&self, i: usize) -> Vec<TokenId> {
        let mut path = Vec::with_capacity(self.depth[i] as usize);
        let mut cur = Some(i);
        while let Some(c) = cur {
            path.push(self.tokens[c]);
            cur = self.parent[c];
        }
        path.reverse();
        path
    }

    /// First buffer index (if any) holding a child of `parent` labeled
    /// `token`. `None` as parent means the virtual root.
    pub fn child_with_token(&self, parent: Option<usize>, token: TokenId) -> Option<usize> {
        (0..self.len()).find(|&j| self.parent[j] == parent && self.tokens[j] == token)
    }

    /// Dense ancestor mask; `mask[i][j]` is [`Self::attends`]. Row `i` only
    /// has entries for `j <= i` since later positions are never visible.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        (0..self.len())
            .map(|i| (0..=i).map(|j| self.attends(i, j)).collect())
            .collect()
    }
}

/// Breadth-first flattening of the selected subtree: level by level, within a
/// level parents in buffer order and children in token order. Shared prefixes
/// therefore occupy exactly one position each.
pub fn flatten(tree: &DraftTree) -> DraftBuffer {
    let mut buffer = DraftBuffer::empty();
    let mut queue: VecDeque<(usize, Option<usize>)> = tree.nodes[ROOT]
        .children
        .iter()
        .map(|&c| (c, ROOT_PARENT))
        .collect();
    while let Some((idx, parent)) = queue.pop_front() {
        let node = &tree.nodes[idx];
        buffer.tokens.push(node.token);
        buffer.parent.push(parent);
        buffer.depth.push(node.depth);
        let buffer_idx = buffer.tokens.len() - 1;
        for &child in &node.children {
            queue.push_back((child, Some(buffer_idx)));
        }
    }
    buffer
}
