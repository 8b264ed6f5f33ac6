//! Exact optimal transport on small instances via min-cost flow with
//! successive shortest paths. Serves as the oracle against which the
//! entropic solver is checked.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    flow: i64,
}

struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        FlowNetwork {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let id = self.edges.len();
        self.edges.push(Edge {
            to,
            cap,
            cost,
            flow: 0,
        });
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            flow: 0,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
    }

    /// Sends `amount` units from `s` to `t`, returning the total cost.
    /// Uses Dijkstra with Johnson potentials; all original costs are >= 0.
    fn min_cost_flow(&mut self, s: usize, t: usize, amount: i64) -> Result<f64> {
        let n = self.adj.len();
        let mut potential = vec![0.0; n];
        let mut remaining = amount;
        let mut total = 0.0;

        while remaining > 0 {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev_edge = vec![usize::MAX; n];
            let mut done = vec![false; n];
            dist[s] = 0.0;
            // Dense Dijkstra; the graphs here have at most a few hundred nodes.
            loop {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for v in 0..n {
                    if !done[v] && dist[v] < best {
                        best = dist[v];
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for &eid in &self.adj[u] {
                    let e = &self.edges[eid];
                    if e.cap - e.flow <= 0 {
                        continue;
                    }
                    let reduced = e.cost + potential[u] - potential[e.to];
                    let nd = dist[u] + reduced.max(0.0);
                    if nd + 1e-15 < dist[e.to] {
                        dist[e.to] = nd;
                        prev_edge[e.to] = eid;
                    }
                }
            }
            if !dist[t].is_finite() {
                return Err(Error::invalid(
                    "transport network disconnected before demand met",
                ));
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            // Find bottleneck along the path.
            let mut push = remaining;
            let mut v = t;
            while v != s {
                let e = &self.edges[prev_edge[v]];
                push = push.min(e.cap - e.flow);
                v = self.edges[prev_edge[v] ^ 1].to;
            }
            // Apply.
            let mut v = t;
            while v != s {
                let eid = prev_edge[v];
                self.edges[eid].flow += push;
                self.edges[eid ^ 1].flow -= push;
                total += push as f64 * self.edges[eid].cost;
                v = self.edges[eid ^ 1].to;
            }
            remaining -= push;
        }
        Ok(total)
    }
}

/// Exact optimal transport cost (squared-Euclidean ground cost, uniform
/// marginals) between sample sets with `N * M <= 4096`.
pub fn exact_ot_small(x: &Matrix, y: &Matrix) -> Result<f64> {
    let n = x.rows();
    let m = y.rows();
    if n == 0 || m == 0 {
        return Err(Error::invalid("exact OT needs non-empty sets"));
    }
    if x.cols() != y.cols() {
        return Err(Error::dims("exact OT sample dimensions differ"));
    }
    if n * m > 4096 {
        return Err(Error::invalid(format!(
            "instance {n}x{m} too large for the exact solver (N*M <= 4096)"
        )));
    }

    // Uniform marginals 1/N and 1/M become integral after scaling by
    // lcm(N, M): each source holds L/N units, each sink wants L/M.
    let l = n / gcd(n, m) * m;
    let s = n + m;
    let t = n + m + 1;
    let mut net = FlowNetwork::new(n + m + 2);
    for i in 0..n {
        net.add_edge(s, i, (l / n) as i64, 0.0);
    }
    for j in 0..m {
        net.add_edge(n + j, t, (l / m) as i64, 0.0);
    }
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            let cost: f64 = xi
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            net.add_edge(i, n + j, l as i64, cost);
        }
    }
    let total = net.min_cost_flow(s, t, l as i64)?;
    Ok(total / l as f64)
}
