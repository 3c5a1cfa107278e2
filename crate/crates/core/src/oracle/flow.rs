//! Integer-supply min-cost flow on a complete bipartite transportation network.
//!
//! Successive shortest paths with Johnson potentials. Each Dijkstra run starts
//! from one source with remaining supply and stops at the first sink with
//! remaining demand. Arc costs are real; supplies and flows are integers, so
//! the returned flow is an exact vertex of the transportation polytope.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by node id
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NONE: usize = usize::MAX;

/// Solves `min <cost, flow>` subject to row sums `supply` and column sums
/// `demand`. Both sides must carry the same total.
///
/// Returns the integer flow, row-major `supply.len() x demand.len()`.
pub(crate) fn transport_min_cost_flow(supply: &[u64], demand: &[u64], cost: &DMatrix<f64>) -> Vec<u64> {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(cost.nrows(), n);
    debug_assert_eq!(cost.ncols(), m);
    debug_assert_eq!(supply.iter().sum::<u64>(), demand.iter().sum::<u64>());

    let mut flow = vec![0u64; n * m];
    // Nodes: sources 0..n, sinks n..n+m.
    let mut potential = vec![0.0f64; n + m];
    for j in 0..m {
        let min = (0..n).map(|i| cost[(i, j)]).fold(f64::INFINITY, f64::min);
        potential[n + j] = min.min(0.0);
    }
    let mut excess: Vec<u64> = supply.to_vec();
    let mut deficit: Vec<u64> = demand.to_vec();

    let mut dist = vec![f64::INFINITY; n + m];
    let mut pred = vec![NONE; n + m];
    let mut done = vec![false; n + m];
    let mut touched: Vec<usize> = Vec::with_capacity(n + m);
    let mut heap = BinaryHeap::new();

    let mut next_source = 0usize;
    loop {
        while next_source < n && excess[next_source] == 0 {
            next_source += 1;
        }
        if next_source == n {
            break;
        }
        let root = next_source;

        for &v in &touched {
            dist[v] = f64::INFINITY;
            pred[v] = NONE;
            done[v] = false;
        }
        touched.clear();
        heap.clear();

        dist[root] = 0.0;
        touched.push(root);
        heap.push(Entry { dist: 0.0, node: root });
        let mut target = NONE;
        while let Some(Entry { dist: d, node: u }) = heap.pop() {
            if done[u] || d > dist[u] {
                continue;
            }
            done[u] = true;
            if u >= n {
                let j = u - n;
                if deficit[j] > 0 {
                    target = u;
                    break;
                }
                // Reverse arcs sink j -> source i where flow is positive.
                for i in 0..n {
                    if flow[i * m + j] == 0 || done[i] {
                        continue;
                    }
                    let rc = (-cost[(i, j)] + potential[u] - potential[i]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[i] {
                        if dist[i].is_infinite() {
                            touched.push(i);
                        }
                        dist[i] = nd;
                        pred[i] = u;
                        heap.push(Entry { dist: nd, node: i });
                    }
                }
            } else {
                let i = u;
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[(i, j)] + potential[i] - potential[v]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[v] {
                        if dist[v].is_infinite() {
                            touched.push(v);
                        }
                        dist[v] = nd;
                        pred[v] = i;
                        heap.push(Entry { dist: nd, node: v });
                    }
                }
            }
        }
        assert!(target != NONE, "balanced transportation network is always feasible");

        let dt = dist[target];
        for &v in &touched {
            potential[v] += dist[v].min(dt);
        }
        for v in 0..n + m {
            if dist[v].is_infinite() {
                potential[v] += dt;
            }
        }

        // Bottleneck along the path.
        let mut delta = excess[root].min(deficit[target - n]);
        let mut v = target;
        while v != root {
            let u = pred[v];
            if u >= n {
                // reverse arc sink u -> source v
                delta = delta.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        let mut v = target;
        while v != root {
            let u = pred[v];
            if u >= n {
                flow[v * m + (u - n)] -= delta;
            } else {
                flow[u * m + (v - n)] += delta;
            }
            v = u;
        }
        excess[root] -= delta;
        deficit[target - n] -= delta;
    }
    flow
}
