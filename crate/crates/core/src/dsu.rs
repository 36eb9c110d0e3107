//! Disjoint-set forest used to label radio contact components.

use smallvec::SmallVec;

#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: SmallVec<[u16; 16]>,
    rank: SmallVec<[u8; 16]>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u16).collect(),
            rank: SmallVec::from_elem(0, n),
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] as usize != root {
            root = self.parent[root] as usize;
        }
        // path compression
        let mut cur = x;
        while self.parent[cur] as usize != root {
            let next = self.parent[cur] as usize;
            self.parent[cur] = root as u16;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb as u16,
            std::cmp::Ordering::Greater => self.parent[rb] = ra as u16,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra as u16;
                self.rank[ra] += 1;
            }
        }
        true
    }

    #[cfg(test)]
    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}
