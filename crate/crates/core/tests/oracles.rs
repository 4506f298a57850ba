//! Production code against straight-line reference implementations.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use xmodal_core::fusion::{fuse, mean_time, FusionStrategy};
use xmodal_core::projection::{
    init_projection, project_batch, Mode, ProjectionConfig, ProjectionParams,
};
use xmodal_core::rng::{seeded, Rng};
use xmodal_core::store::{LayerStack, VisualTokenGrid};
use xmodal_core::substitution::substitute;
use xmodal_core::CLIP_DIM;

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---- projection forward ----

fn naive_affine(x: &[f64], w: &Array2<f32>, b: &Array1<f32>) -> Vec<f64> {
    let mut out = vec![0.0; w.nrows()];
    for i in 0..w.nrows() {
        let mut acc = b[i] as f64;
        for j in 0..w.ncols() {
            acc += w[[i, j]] as f64 * x[j];
        }
        out[i] = acc;
    }
    out
}

fn naive_norm_gelu(x: &[f64], gain: &Array1<f32>, bias: &Array1<f32>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let y = (v - mean) / (var + 1e-5).sqrt() * gain[i] as f64 + bias[i] as f64;
            0.5 * y * (1.0 + libm::erf(y / std::f64::consts::SQRT_2))
        })
        .collect()
}

fn naive_forward(p: &ProjectionParams, z: &[f32]) -> Vec<f64> {
    let z: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let h1 = naive_norm_gelu(&naive_affine(&z, &p.w1, &p.b1), &p.ln1_gain, &p.ln1_bias);
    let h2 = naive_norm_gelu(&naive_affine(&h1, &p.w2, &p.b2), &p.ln2_gain, &p.ln2_bias);
    naive_affine(&h2, &p.w3, &p.b3)
}

#[test]
fn projection_matches_naive_forward_on_random_configs() {
    let mut rng = seeded(21, 0);
    for case in 0..100u64 {
        let d_a = rng.random_range(1..40);
        let hidden = rng.random_range(2..24);
        let cfg = ProjectionConfig {
            audio_dim: d_a,
            hidden,
            dropout: 0.1,
        };
        let mut p = init_projection(cfg, case).unwrap();
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += (0.05 * normal(&mut rng)) as f32;
            }
        }
        let rows = rng.random_range(1..4);
        let z = Array2::from_shape_simple_fn((rows, d_a), || normal(&mut rng) as f32);
        let got = project_batch(&p, z.view(), Mode::Infer).unwrap();
        assert_eq!(got.dim(), (rows, CLIP_DIM));
        for r in 0..rows {
            let want = naive_forward(&p, z.row(r).as_slice().unwrap());
            for (g, w) in got.row(r).iter().zip(&want) {
                assert!(
                    (*g as f64 - w).abs() <= 1e-5 * (1.0 + w.abs()),
                    "case {case}: {g} vs {w}"
                );
            }
        }
    }
}

// ---- fusion ----

fn random_stack(rng: &mut Rng) -> LayerStack {
    let (l, s, d) = (
        rng.random_range(1..=8),
        rng.random_range(1..=16),
        rng.random_range(1..=32),
    );
    let values = (0..l * s * d).map(|_| normal(rng) as f32).collect();
    LayerStack::new(l, s, d, values).unwrap()
}

/// Triple loop over layers, time steps and features on the flat buffer.
fn naive_fuse(stack: &LayerStack, weights: &[f64]) -> Vec<f64> {
    let (l, s, d) = (stack.layers(), stack.seq_len(), stack.width());
    let v = stack.values();
    let mut out = vec![0.0; d];
    for layer in 0..l {
        for step in 0..s {
            for j in 0..d {
                out[j] += weights[layer] * v[(layer * s + step) * d + j] as f64 / s as f64;
            }
        }
    }
    out
}

fn naive_weights(strategy: &FusionStrategy, l: usize) -> Vec<f64> {
    (0..l)
        .map(|i| match strategy {
            FusionStrategy::FinalOnly => (i == l - 1) as u8 as f64,
            FusionStrategy::MiddleOnly => (i + 1 == l.div_ceil(2)) as u8 as f64,
            FusionStrategy::LastN(n) => {
                if i >= l - n {
                    1.0 / *n as f64
                } else {
                    0.0
                }
            }
            FusionStrategy::AverageAll => 1.0 / l as f64,
            FusionStrategy::WeightedAll(w) => w[i],
        })
        .collect()
}

#[test]
fn every_fusion_strategy_matches_the_triple_loop() {
    let mut rng = seeded(5, 0);
    for _ in 0..200 {
        let stack = random_stack(&mut rng);
        let l = stack.layers();
        let raw: Vec<f64> = (0..l).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // Make the weights sum to exactly one in floating point.
        let head: f64 = weights[..l - 1].iter().sum();
        weights[l - 1] = 1.0 - head;
        let strategies = [
            FusionStrategy::FinalOnly,
            FusionStrategy::MiddleOnly,
            FusionStrategy::LastN(rng.random_range(1..=l)),
            FusionStrategy::AverageAll,
            FusionStrategy::WeightedAll(weights),
        ];
        for s in &strategies {
            let got = fuse(&stack, s).unwrap();
            let want = naive_fuse(&stack, &naive_weights(s, l));
            for (g, w) in got.as_slice().iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-6, "{s}: {g} vs {w}");
            }
        }
        assert_eq!(
            fuse(&stack, &FusionStrategy::LastN(1)).unwrap(),
            fuse(&stack, &FusionStrategy::FinalOnly).unwrap()
        );
        assert_eq!(
            fuse(&stack, &FusionStrategy::FinalOnly).unwrap().0,
            mean_time(&stack, l).unwrap()
        );
    }
}

// ---- substitution ----

/// Full sort by (similarity desc, index asc), cosine in f64.
fn brute_force_selection(f_a: &[f32], grid: &VisualTokenGrid, k: usize) -> Vec<usize> {
    let cos = |row: &[f32]| {
        let dot: f64 = row
            .iter()
            .zip(f_a)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let na: f64 = row.iter().map(|&a| a as f64 * a as f64).sum::<f64>().sqrt();
        let nb: f64 = f_a.iter().map(|&b| b as f64 * b as f64).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut scored: Vec<(f64, usize)> = (1..=grid.patches())
        .map(|i| (cos(grid.row(i)), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut sel: Vec<usize> = scored.into_iter().take(k).map(|(_, i)| i).collect();
    sel.sort_unstable();
    sel
}

fn tied_grid(rng: &mut Rng, f_a: &[f32], n: usize) -> VisualTokenGrid {
    let mut rows: Vec<Vec<f32>> = vec![(0..CLIP_DIM).map(|_| normal(rng) as f32).collect()];
    for _ in 0..n {
        let row = match rng.random_range(0..5) {
            // exact duplicate of an earlier patch
            0 if rows.len() > 1 => rows[rng.random_range(1..rows.len())].clone(),
            1 => vec![0.0; CLIP_DIM],
            2 => f_a.to_vec(),
            3 => f_a.iter().map(|v| -v).collect(),
            _ => (0..CLIP_DIM).map(|_| normal(rng) as f32).collect(),
        };
        rows.push(row);
    }
    VisualTokenGrid::new(n, rows.concat()).unwrap()
}

#[test]
fn substitution_matches_full_sort_oracle_with_ties() {
    let mut rng = seeded(8, 0);
    for case in 0..1000 {
        let f_a: Vec<f32> = if case % 50 == 0 {
            vec![0.0; CLIP_DIM]
        } else {
            (0..CLIP_DIM).map(|_| normal(&mut rng) as f32).collect()
        };
        let n = rng.random_range(0..40);
        let grid = tied_grid(&mut rng, &f_a, n);
        let k = rng.random_range(0..=n + 3);
        let r = substitute(&f_a, &grid, k).unwrap();
        let want = brute_force_selection(&f_a, &grid, k.min(n));
        assert_eq!(r.selected_indices, want, "case {case}, n={n}, k={k}");

        assert_eq!(r.grid.cls(), &f_a[..]);
        for i in 1..=n {
            if want.binary_search(&i).is_ok() {
                assert_eq!(r.grid.row(i), grid.row(i));
            } else {
                assert!(r.grid.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }
}
