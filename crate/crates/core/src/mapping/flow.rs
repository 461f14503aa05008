//! Dinic max-flow on small integer networks.
//!
//! Deterministic: edges keep insertion order, so repeated runs produce the
//! same flow decomposition.

#[derive(Debug, Clone, Copy)]
struct Edge {
    to: usize,
    cap: u64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct MaxFlow {
    graph: Vec<Vec<Edge>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl MaxFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            graph: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    /// Returns a handle usable with [`MaxFlow::flow_on`].
    pub fn add_edge(&mut self, from: usize, to: usize, cap: u64) -> (usize, usize) {
        let fwd = self.graph[from].len();
        let rev = self.graph[to].len();
        self.graph[from].push(Edge { to, cap, rev });
        self.graph[to].push(Edge { to: from, cap: 0, rev: fwd });
        (from, fwd)
    }

    /// Flow pushed through an edge after [`MaxFlow::max_flow`].
    pub fn flow_on(&self, handle: (usize, usize), original_cap: u64) -> u64 {
        original_cap - self.graph[handle.0][handle.1].cap
    }

    fn bfs(&mut self, source: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for e in &self.graph[u] {
                if e.cap > 0 && self.level[e.to] < 0 {
                    self.level[e.to] = self.level[u] + 1;
                    queue.push_back(e.to);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, sink: usize, limit: u64) -> u64 {
        if u == sink {
            return limit;
        }
        while self.iter[u] < self.graph[u].len() {
            let i = self.iter[u];
            let e = self.graph[u][i];
            if e.cap > 0 && self.level[u] < self.level[e.to] {
                let pushed = self.dfs(e.to, sink, limit.min(e.cap));
                if pushed > 0 {
                    self.graph[u][i].cap -= pushed;
                    self.graph[e.to][e.rev].cap += pushed;
                    return pushed;
                }
            }
            self.iter[u] += 1;
        }
        0
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> u64 {
        let mut total = 0;
        loop {
            self.bfs(source);
            if self.level[sink] < 0 {
                return total;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let pushed = self.dfs(source, sink, u64::MAX);
                if pushed == 0 {
                    break;
                }
                total += pushed;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_network() {
        // source 0 -> {1,2} -> 3, classic diamond.
        let mut f = MaxFlow::new(4);
        f.add_edge(0, 1, 3);
        f.add_edge(0, 2, 2);
        f.add_edge(1, 3, 2);
        f.add_edge(2, 3, 3);
        assert_eq!(f.max_flow(0, 3), 4);
    }

    #[test]
    fn bipartite_matching() {
        // 3 left, 3 right, only left i -> right i allowed.
        let mut f = MaxFlow::new(8);
        for i in 0..3 {
            f.add_edge(0, 1 + i, 1);
            f.add_edge(1 + i, 4 + i, 1);
            f.add_edge(4 + i, 7, 1);
        }
        assert_eq!(f.max_flow(0, 7), 3);
    }

    #[test]
    fn flow_on_reports_per_edge_usage() {
        let mut f = MaxFlow::new(3);
        let a = f.add_edge(0, 1, 5);
        let b = f.add_edge(1, 2, 3);
        assert_eq!(f.max_flow(0, 2), 3);
        assert_eq!(f.flow_on(a, 5), 3);
        assert_eq!(f.flow_on(b, 3), 3);
    }
}
