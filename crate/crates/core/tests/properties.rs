use gvit::graph::{AdjacencyMode, ChainAdjacency, GasGroup, SENSOR_CHANNELS};
use gvit::ingest::{downsample, RawStream, StreamRow};
use gvit::tensor::{pool_segments, Tape, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..7).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

fn stream(len: usize) -> RawStream {
    let rows = (0..len)
        .map(|i| StreamRow {
            time: i as f64,
            conc: [if (i / 7) % 2 == 0 { 0.0 } else { 100.0 }, 0.0],
            sensors: [i as f64; SENSOR_CHANNELS],
        })
        .collect();
    RawStream::new(GasGroup::CoEthylene, "prop", rows).unwrap()
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(x in matrix(), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let a = tape.constant(x.clone());
        let shifted = Tensor::matrix(x.rows(), x.cols(), x.data().iter().map(|v| v + shift).collect()).unwrap();
        let b = tape.constant(shifted);
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        prop_assert!(tape.value(sa).max_abs_diff(tape.value(sb)).unwrap() < 1e-12);
        for i in 0..x.rows() {
            let s: f64 = tape.value(sa).row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_ignores_row_affine_maps(x in matrix(), a in 0.5f64..4.0, b in -10.0f64..10.0) {
        // rows need spread, otherwise eps dominates the variance
        let spread = (0..x.rows()).all(|i| {
            let r = x.row(i);
            r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min) > 0.5
        });
        prop_assume!(spread);
        let mut tape = Tape::new();
        let c = x.cols();
        let gain = tape.constant(Tensor::filled(vec![c], 1.0));
        let bias = tape.constant(Tensor::zeros(vec![c]));
        let v1 = tape.constant(x.clone());
        let moved = Tensor::matrix(x.rows(), c, x.data().iter().map(|v| a * v + b).collect()).unwrap();
        let v2 = tape.constant(moved);
        let n1 = tape.layer_norm_rows(v1, gain, bias, 1e-12).unwrap();
        let n2 = tape.layer_norm_rows(v2, gain, bias, 1e-12).unwrap();
        prop_assert!(tape.value(n1).max_abs_diff(tape.value(n2)).unwrap() < 1e-9);
    }

    #[test]
    fn downsampling_composes(len in 1usize..200, a in 1usize..6, b in 1usize..6) {
        let s = stream(len);
        let twice = downsample(&downsample(&s, a).unwrap(), b).unwrap();
        let once = downsample(&s, a * b).unwrap();
        prop_assert_eq!(twice.rows(), once.rows());
    }

    #[test]
    fn pool_segments_cover_in_order(n in 1usize..500, m in 1usize..400) {
        let segs = pool_segments(n, m);
        prop_assert_eq!(segs.len(), m);
        prop_assert_eq!(segs[0].start, 0);
        prop_assert_eq!(segs[m - 1].end, n);
        for w in segs.windows(2) {
            prop_assert!(w[0].start <= w[1].start);
            prop_assert!(w[1].start <= w[0].end);
        }
        for s in &segs {
            prop_assert!(!s.is_empty() && s.end <= n);
            if n >= m {
                prop_assert!(s.len() >= n / m);
            }
        }
        if n >= m {
            prop_assert_eq!(segs.iter().map(|s| s.len()).sum::<usize>(), n);
        }
    }

    #[test]
    fn propagation_preserves_constant_rows_in_row_mode(n in 1usize..40, v in -3.0f64..3.0) {
        let p = ChainAdjacency::new(n).unwrap().normalize(AdjacencyMode::Row);
        let out = p.apply(&Tensor::filled(vec![n, 3], v)).unwrap();
        for x in out.data() {
            prop_assert!((x - v).abs() < 1e-12);
        }
    }
}
