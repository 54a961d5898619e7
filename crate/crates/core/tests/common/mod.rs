//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;

use rafsim::topology::{parse_topology, Topology};

/// Brute-force simple paths over an adjacency matrix, as node-name sequences.
pub fn oracle_paths(
    names: &[String],
    adj: &[Vec<bool>],
    src: usize,
    dst: usize,
) -> BTreeSet<Vec<String>> {
    fn walk(
        adj: &[Vec<bool>],
        at: usize,
        dst: usize,
        seen: &mut Vec<bool>,
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if at == dst {
            out.push(stack.clone());
            return;
        }
        for next in 0..adj.len() {
            if adj[at][next] && !seen[next] {
                seen[next] = true;
                stack.push(next);
                walk(adj, next, dst, seen, stack, out);
                stack.pop();
                seen[next] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[src] = true;
    let mut out = Vec::new();
    walk(adj, src, dst, &mut seen, &mut vec![src], &mut out);
    out.into_iter()
        .map(|p| p.into_iter().map(|i| names[i].clone()).collect())
        .collect()
}

/// Adjacency matrix of the up links of a parsed topology.
pub fn adjacency(t: &Topology) -> (Vec<String>, Vec<Vec<bool>>) {
    let n = t.switch_count();
    let names = t.switches().map(|s| t.switch_name(s).to_string()).collect();
    let mut adj = vec![vec![false; n]; n];
    for l in t.links().iter().filter(|l| l.status.is_up()) {
        let (a, b) = (l.end_a.switch.0 as usize, l.end_b.switch.0 as usize);
        adj[a][b] = true;
        adj[b][a] = true;
    }
    (names, adj)
}

#[derive(Debug, Clone)]
pub struct NetEdge {
    pub a: usize,
    pub b: usize,
    /// Thousandths.
    pub rel: u32,
    pub down: bool,
}

/// Random network description that renders to a topology document. Switch `i` is `s{i}` and
/// carries host `h{i}` at port 100 with address 10.0.0.{i+1}.
#[derive(Debug, Clone)]
pub struct Net {
    pub n: usize,
    pub edges: Vec<NetEdge>,
    pub host_delay: f64,
}

impl Net {
    pub fn text(&self) -> String {
        let mut ports = vec![0u16; self.n];
        let names: Vec<String> = (0..self.n).map(|i| format!("\"s{i}\"")).collect();
        let mut t = format!("switches = [{}]\n", names.join(", "));
        for i in 0..self.n {
            t += &format!(
                "[[hosts]]\nid = \"h{i}\"\naddress = \"10.0.0.{}\"\nattach = \"s{i}:100\"\ndelay_ms = {}\n",
                i + 1,
                self.host_delay
            );
        }
        for e in &self.edges {
            ports[e.a] += 1;
            ports[e.b] += 1;
            t += &format!(
                "[[links]]\nid = \"s{}-s{}\"\na = \"s{}:{}\"\nb = \"s{}:{}\"\nreliability = {}\ndelay_ms = 1.0\n{}",
                e.a,
                e.b,
                e.a,
                ports[e.a],
                e.b,
                ports[e.b],
                e.rel as f64 / 1000.0,
                if e.down { "status = \"down\"\n" } else { "" }
            );
        }
        t
    }

    pub fn topology(&self) -> Topology {
        parse_topology(&self.text()).expect("generated topology is valid")
    }
}

/// Networks of 1..=`max_n` switches with edge probability `p`, reliabilities in [0.5, 1] and
/// roughly `p_down` of the links down.
pub fn arb_net(max_n: usize, p: f64, p_down: f64) -> impl Strategy<Value = Net> {
    (1..=max_n).prop_flat_map(move |n| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        let m = pairs.len();
        (
            prop::collection::vec(
                (
                    prop::bool::weighted(p),
                    500u32..=1000,
                    prop::bool::weighted(p_down),
                ),
                m,
            ),
            prop::sample::select(vec![0.0, 0.1, 1.0]),
        )
            .prop_map(move |(bits, host_delay)| Net {
                n,
                edges: pairs
                    .iter()
                    .zip(bits)
                    .filter(|(_, (keep, _, _))| *keep)
                    .map(|(&(a, b), (_, rel, down))| NetEdge { a, b, rel, down })
                    .collect(),
                host_delay,
            })
    })
}
