//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semco::grouping::{cosine_distance, LabelGrouping};
use semco::labelsem::{EmbeddingMatrix, KnowledgeGraph, LabelMatrix};
use semco::matrix::Matrix;
use semco::model::ImageTensor;
use semco::model::ModelState;

/// Central finite differences of `loss` over every live parameter.
pub fn finite_difference<F>(model: &ModelState, step: f64, loss: F) -> Vec<f64>
where
    F: Fn(&ModelState) -> f64,
{
    let mut probe = model.clone();
    (0..model.num_params())
        .map(|i| {
            let base = probe.params()[i];
            probe.params_mut()[i] = base + step;
            let up = loss(&probe);
            probe.params_mut()[i] = base - step;
            let down = loss(&probe);
            probe.params_mut()[i] = base;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Vec<ImageTensor> {
    (0..n)
        .map(|i| {
            let px = (0..h * w * c).map(|_| rng.gen::<f64>()).collect();
            ImageTensor::new(i as u64, h, w, c, px).unwrap()
        })
        .collect()
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, k: usize, d: usize) -> LabelMatrix {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    LabelMatrix::new(
        (0..k).map(|i| format!("class{i}")).collect(),
        Matrix::from_rows(&rows).unwrap(),
    )
    .unwrap()
}

pub fn random_partition(rng: &mut ChaCha8Rng, k: usize) -> LabelGrouping {
    let q = rng.gen_range(1..=k);
    let raw: Vec<usize> = (0..k).map(|_| rng.gen_range(0..q)).collect();
    LabelGrouping::from_assignments(&raw, 0.2)
}

/// Random point on the probability simplex.
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize, peak: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| (rng.gen::<f64>() * peak).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Reference DBSCAN: explicit ε-neighbourhoods, breadth-first expansion from
/// core points in index order, border points to the lowest-index core
/// neighbour, noise as singletons. Returns a canonical partition (groups as
/// sorted member lists, ordered by smallest member).
pub fn brute_force_dbscan(rows: &[Vec<f64>], eps: f64, min_points: usize) -> Vec<Vec<usize>> {
    let n = rows.len();
    let dist = |i: usize, j: usize| if i == j { 0.0 } else { cosine_distance(&rows[i], &rows[j]) };
    let hood: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| dist(i, j) <= eps).collect()).collect();
    let core: Vec<bool> = hood.iter().map(|h| h.len() >= min_points).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        label[start] = Some(next);
        while let Some(i) = queue.pop_front() {
            for &j in &hood[i] {
                if core[j] && label[j].is_none() {
                    label[j] = Some(next);
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            label[i] = hood[i].iter().find(|&&j| core[j]).and_then(|&j| label[j]);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_label = std::collections::BTreeMap::new();
    for (i, l) in label.iter().enumerate() {
        match l {
            Some(l) => by_label.entry(*l).or_insert_with(Vec::new).push(i),
            None => groups.push(vec![i]),
        }
    }
    groups.extend(by_label.into_values());
    groups.sort();
    groups
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph over `n` terms where roughly a third of the terms have no
/// vector; every such term is linked to at least one term that has one.
pub fn random_retrofit_problem(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (EmbeddingMatrix, KnowledgeGraph) {
    let present: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.67)).collect();
    let mut emb = EmbeddingMatrix::new(dim);
    for i in (0..n).filter(|&i| present[i]) {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        emb.push(format!("t{i}"), &v).unwrap();
    }
    let mut graph = KnowledgeGraph::new();
    let anchors: Vec<usize> = (0..n).filter(|&i| present[i]).collect();
    for i in (0..n).filter(|&i| !present[i]) {
        let a = anchors[rng.gen_range(0..anchors.len())];
        graph.add_edge(format!("t{i}"), format!("t{a}"), "IsA", rng.gen_range(0.2..2.0)).unwrap();
    }
    for _ in 0..rng.gen_range(0..2 * n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        graph.add_edge(format!("t{a}"), format!("t{b}"), "SimilarTo", rng.gen_range(0.2..2.0)).unwrap();
    }
    (emb, graph)
}

/// `Σ α‖v − v̂‖² + Σ_edges w‖v_a − v_b‖²` evaluated from scratch; α is
/// `alpha` for terms with an original vector and 0 otherwise.
pub fn retrofit_energy(original: &EmbeddingMatrix, graph: &KnowledgeGraph, alpha: f64, v: &EmbeddingMatrix) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let anchor: f64 = original.iter().map(|(t, x)| alpha * sq(v.get(t).unwrap(), x)).sum();
    let edges: f64 = graph
        .edges()
        .iter()
        .map(|e| e.weight * sq(v.get(&e.a).unwrap(), v.get(&e.b).unwrap()))
        .sum();
    anchor + edges
}
