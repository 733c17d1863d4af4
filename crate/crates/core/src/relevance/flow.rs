use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
const FLOW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
}

/// Directed network with real capacities; exact max-flow by Edmonds-Karp.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    /// Edges come in pairs: `2k` is forward, `2k + 1` its residual twin.
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        assert!(from < self.n_nodes() && to < self.n_nodes(), "node out of range");
        assert!(cap >= 0.0, "negative capacity");
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    /// Value of a maximum `source → sink` flow. The network is left untouched.
    pub fn max_flow(&self, source: usize, sink: usize) -> f64 {
        if source == sink {
            return 0.0;
        }
        let mut residual: Vec<f64> = self.edges.iter().map(|e| e.cap).collect();
        let mut total = 0.0;
        let mut parent = vec![usize::MAX; self.n_nodes()];
        loop {
            parent.fill(usize::MAX);
            let mut queue = VecDeque::from([source]);
            let mut seen = vec![false; self.n_nodes()];
            seen[source] = true;
            while let Some(u) = queue.pop_front() {
                if u == sink {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.edges[e].to;
                    if !seen[v] && residual[e] > FLOW_TOLERANCE {
                        seen[v] = true;
                        parent[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[sink] {
                return total;
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = sink;
            while v != source {
                let e = parent[v];
                bottleneck = bottleneck.min(residual[e]);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = parent[v];
                residual[e] -= bottleneck;
                residual[e ^ 1] += bottleneck;
                v = self.edges[e ^ 1].to;
            }
            total += bottleneck;
        }
    }
}
