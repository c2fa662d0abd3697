use proptest::prelude::*;

use pnma_core::crf::{log_partition, viterbi_decode, CrfParams};
use pnma_core::memory::{knn_query, ActivationMemory, MemoryMeta};
use pnma_core::pnma::{neighborhood_repr, weighting_registry, NeighborhoodParams};
use pnma_core::Tensor;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn all_paths(n: usize, k: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k as u32).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

fn score(e: &Tensor<f64>, p: &CrfParams<f64>, path: &[u32]) -> f64 {
    let mut s = p.start.data()[path[0] as usize] + p.stop.data()[path[path.len() - 1] as usize];
    for (t, &y) in path.iter().enumerate() {
        s += e.at(t, y as usize);
        if t > 0 {
            s += p.transitions.at(path[t - 1] as usize, y as usize);
        }
    }
    s
}

fn crf_case() -> impl Strategy<Value = (Tensor<f64>, CrfParams<f64>)> {
    (1usize..=5, 1usize..=3).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * k),
            prop::collection::vec(-2.0f64..2.0, k * k + 2 * k),
        )
            .prop_map(move |(e, t)| {
                let mut p = CrfParams::zeros(k, 1);
                p.transitions = tensor(&[k, k], t[..k * k].to_vec());
                p.start = Tensor::vector(t[k * k..k * k + k].to_vec());
                p.stop = Tensor::vector(t[k * k + k..].to_vec());
                (tensor(&[n, k], e), p)
            })
    })
}

fn neighborhood_case() -> impl Strategy<Value = (Vec<f64>, Tensor<f64>, Tensor<f64>, Vec<usize>)> {
    (1usize..=6, 1usize..=5).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(-2.0f64..2.0, d),
            prop::collection::vec(-2.0f64..2.0, k * d),
            prop::collection::vec(-2.0f64..2.0, k * d),
            Just((0..k).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(move |(h, m, n, perm)| (h, tensor(&[k, d], m), tensor(&[k, d], n), perm))
    })
}

fn dist(h: &[f64], m: &Tensor<f64>) -> Vec<f64> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .zip(h)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let mut out = Tensor::zeros(t.shape());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(t.row(p));
    }
    out
}

proptest! {
    #[test]
    fn log_partition_matches_enumeration((e, p) in crf_case()) {
        let scores: Vec<f64> = all_paths(e.rows(), e.cols()).iter().map(|q| score(&e, &p, q)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let want = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let got = log_partition(&e, &p).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        prop_assert!(got >= max - 1e-12);
    }

    #[test]
    fn viterbi_path_attains_the_maximum((e, p) in crf_case()) {
        let best = all_paths(e.rows(), e.cols()).iter().map(|q| score(&e, &p, q)).fold(f64::NEG_INFINITY, f64::max);
        let path = viterbi_decode(&e, &p).unwrap();
        prop_assert!((score(&e, &p, &path) - best).abs() < 1e-12);
    }

    #[test]
    fn weights_are_a_distribution_and_permutation_invariant((h, m, n, perm) in neighborhood_case()) {
        let k = m.rows();
        let registry = weighting_registry::<f64>();
        for name in registry.names() {
            let w = registry.get(name).unwrap();
            let rows = w.param_rows(k);
            let params = NeighborhoodParams { k, vectors: n.slice_rows(0, rows) };
            let (nk, eta) = neighborhood_repr(&h, &m, &dist(&h, &m), &params, w.as_ref()).unwrap();
            prop_assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(eta.iter().all(|&e| e >= 0.0));

            let pm = permute_rows(&m, &perm);
            let pv = if rows == k { permute_rows(&params.vectors, &perm) } else { params.vectors.clone() };
            let pp = NeighborhoodParams { k, vectors: pv };
            let (nk2, eta2) = neighborhood_repr(&h, &pm, &dist(&h, &pm), &pp, w.as_ref()).unwrap();
            prop_assert_eq!(&nk, &nk2, "{}", name);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(eta2[i], eta[p]);
            }
        }
    }

    #[test]
    fn knn_matches_a_full_sort(
        rows in prop::collection::vec(prop::collection::vec(-3i8..3, 4), 5..60),
        q in prop::collection::vec(-3i8..3, 4),
        k in 1usize..5,
    ) {
        // small integer grids make distance ties common
        let vectors: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
        let n = rows.len();
        let prov = (0..n).map(|i| (format!("s{}", i / 3), (i % 3) as u32)).collect();
        let mem = ActivationMemory::from_parts(4, vectors, vec![0; n], prov, MemoryMeta::default()).unwrap();
        let qf: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        let mut all: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&qf).map(|(&a, b)| (a as f64 - b).powi(2)).sum(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = knn_query(&qf, &mem, k, &[]).unwrap();
        let want: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
        prop_assert_eq!(got.ids(), want);
    }
}
