use alloc::vec;
use alloc::vec::Vec;

use super::MolecularGraph;

/// Flags bonds that lie on at least one cycle (the non-bridges).
pub fn ring_bonds(g: &MolecularGraph) -> Vec<bool> {
    let n = g.atoms.len();
    let adj = g.adjacency();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut in_ring = vec![true; g.bonds.len()];
    let mut time = 0;
    // iterative lowlink: (atom, parent bond, next neighbor index)
    let mut stack: Vec<(usize, Option<usize>, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = time;
        low[root] = time;
        time += 1;
        stack.push((root, None, 0));
        while let Some(&mut (u, parent, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let (v, b) = adj[u][*next];
                *next += 1;
                if Some(b) == parent {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = time;
                    low[v] = time;
                    time += 1;
                    stack.push((v, Some(b), 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let (Some(b), Some(&(p, _, _))) = (parent, stack.last()) {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        in_ring[b] = false;
                    }
                }
            }
        }
    }
    in_ring
}

/// Bemis-Murcko style scaffold: repeatedly removes non-ring atoms with at
/// most one remaining neighbor. Acyclic molecules reduce to the empty graph.
pub fn scaffold(g: &MolecularGraph) -> MolecularGraph {
    let ring = ring_bonds(g);
    let mut ring_atom = vec![false; g.atoms.len()];
    for (b, &r) in g.bonds.iter().zip(&ring) {
        if r {
            ring_atom[b.a] = true;
            ring_atom[b.b] = true;
        }
    }
    let adj = g.adjacency();
    let mut keep = vec![true; g.atoms.len()];
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..g.atoms.len())
        .filter(|&i| !ring_atom[i] && degree[i] <= 1)
        .collect();
    while let Some(u) = queue.pop() {
        if !keep[u] {
            continue;
        }
        keep[u] = false;
        for &(v, _) in &adj[u] {
            if keep[v] {
                degree[v] -= 1;
                if !ring_atom[v] && degree[v] <= 1 {
                    queue.push(v);
                }
            }
        }
    }
    g.induced(&keep)
}
