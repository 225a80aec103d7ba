//! Layer forwards recorded on a [`Tape`]. Every weight multiplies from the
//! right: features are `n × in`, weights `in × out`.

use super::{Graph, NnError, SparseMatrix, Tape, Var};

/// Row-normalized neighbor averaging; isolated nodes get an empty row.
pub fn mean_matrix(graph: &Graph) -> SparseMatrix {
    let mut entries = Vec::new();
    for (i, nb) in graph.neighbor_lists().iter().enumerate() {
        let w = 1.0 / nb.len() as f64;
        entries.extend(nb.iter().map(|&j| (i, j, w)));
    }
    SparseMatrix {
        rows: graph.n_nodes,
        cols: graph.n_nodes,
        entries,
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}`.
pub fn gcn_matrix(graph: &Graph) -> SparseMatrix {
    let nb = graph.neighbor_lists();
    let inv_sqrt: Vec<f64> = nb
        .iter()
        .map(|l| 1.0 / ((l.len() + 1) as f64).sqrt())
        .collect();
    let mut entries = Vec::new();
    for (i, l) in nb.iter().enumerate() {
        entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        entries.extend(l.iter().map(|&j| (i, j, inv_sqrt[i] * inv_sqrt[j])));
    }
    SparseMatrix {
        rows: graph.n_nodes,
        cols: graph.n_nodes,
        entries,
    }
}

pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// `relu(X W1 + mean_nbr(X) W2)`.
pub fn sage(tape: &mut Tape, x: Var, graph: &Graph, w1: Var, w2: Var) -> Result<Var, NnError> {
    let own = tape.matmul(x, w1)?;
    let agg = tape.spmm(mean_matrix(graph), x)?;
    let nbr = tape.matmul(agg, w2)?;
    let sum = tape.add(own, nbr)?;
    Ok(tape.relu(sum))
}

/// `relu(D^{-1/2} Ã D^{-1/2} X W)`.
pub fn gcn(tape: &mut Tape, x: Var, graph: &Graph, w: Var) -> Result<Var, NnError> {
    let xw = tape.matmul(x, w)?;
    let y = tape.spmm(gcn_matrix(graph), xw)?;
    Ok(tape.relu(y))
}

/// Indices kept by top-k pooling: per graph the `⌈ratio · n⌉` highest scores,
/// ties to the lower index, returned in ascending index order.
pub fn topk_select(scores: &[f64], batch: &[usize], n_graphs: usize, ratio: f64) -> Vec<usize> {
    let mut per_graph: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    for (i, &g) in batch.iter().enumerate() {
        per_graph[g].push(i);
    }
    let mut kept = Vec::new();
    for mut nodes in per_graph {
        let k = ((ratio * nodes.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        nodes.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        kept.extend_from_slice(&nodes[..k.min(nodes.len())]);
    }
    kept.sort_unstable();
    kept
}

/// Top-k pooling with projection `p` (`in × 1`): scores `X p / ‖p‖`, kept rows
/// gated by `tanh(score)`, graph restricted to the kept nodes.
pub fn topk(
    tape: &mut Tape,
    x: Var,
    graph: &Graph,
    p: Var,
    ratio: f64,
) -> Result<(Var, Graph, Vec<usize>), NnError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(NnError::Shape(format!(
            "pooling ratio {ratio} outside (0, 1]"
        )));
    }
    if graph.n_nodes == 0 {
        return Err(NnError::EmptySelection);
    }
    let raw = tape.matmul(x, p)?;
    let norm = tape.norm(p);
    let s = tape.div_scalar(raw, norm)?;
    let scores: Vec<f64> = tape.value(s).column(0).to_vec();
    let kept = topk_select(&scores, &graph.batch, graph.n_graphs, ratio);

    let xs = tape.gather_rows(x, kept.clone())?;
    let ss = tape.gather_rows(s, kept.clone())?;
    let gate = tape.tanh(ss);
    let out = tape.mul_col(xs, gate)?;

    let mut new_index = vec![usize::MAX; graph.n_nodes];
    for (k, &i) in kept.iter().enumerate() {
        new_index[i] = k;
    }
    let (mut edges, mut attr) = (Vec::new(), Vec::new());
    for (&[a, b], &d) in graph.edges.iter().zip(&graph.edge_attr) {
        if new_index[a] != usize::MAX && new_index[b] != usize::MAX {
            edges.push([new_index[a], new_index[b]]);
            attr.push(d);
        }
    }
    let batch = kept.iter().map(|&i| graph.batch[i]).collect();
    let sub = Graph::new(kept.len(), edges, attr, batch, graph.n_graphs)?;
    Ok((out, sub, kept))
}

/// Per-graph `[mean | max]` over nodes.
pub fn readout(tape: &mut Tape, x: Var, graph: &Graph) -> Result<Var, NnError> {
    let mean = tape.segment_mean(x, &graph.batch, graph.n_graphs)?;
    let max = tape.segment_max(x, &graph.batch, graph.n_graphs)?;
    tape.concat_cols(mean, max)
}
