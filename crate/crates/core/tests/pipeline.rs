use htsp_core::decompose::Decomposer;
use htsp_core::heuristics::{farthest_insertion_open, RandomUpper};
use htsp_core::instance::{generate_uniform, tour_length};
use htsp_core::io::{read_instance, read_tour, write_instance, write_tour, Format};
use htsp_core::reference::{reference_tour, ReferenceConfig};
use htsp_core::spatial::build_knn;
use htsp_core::{DecomposeConfig, Point, TspInstance};
use proptest::prelude::*;

fn solve(inst: &TspInstance, cfg: DecomposeConfig, seed: u64) -> (Vec<usize>, f64, f64, f64) {
    let knn = build_knn(inst, 10.min(inst.n() - 1)).unwrap();
    let mut dec = Decomposer::new(inst, &knn, cfg).unwrap();
    let initial = dec.tour().length(inst);
    let mut upper = RandomUpper::new(seed);
    let mut total = 0.0;
    while !dec.is_complete() {
        let sub = dec.generate(upper.next_action()).unwrap();
        let path = farthest_insertion_open(&sub, inst);
        total += dec.merge(&sub, &path).unwrap();
    }
    let tour = dec.into_tour().unwrap();
    let len = tour_length(inst, &tour).unwrap();
    (tour.order, initial, total, len)
}

#[test]
fn every_ablation_setting_builds_a_valid_tour() {
    let inst = generate_uniform(700, 11).unwrap();
    for (use_fragment, use_knn) in [(true, true), (false, true), (true, false), (false, false)] {
        let cfg = DecomposeConfig { sub_length: 40, max_new: 30, use_fragment, use_knn };
        let (order, initial, total, len) = solve(&inst, cfg, 3);
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..700).collect::<Vec<_>>(), "{use_fragment} {use_knn}");
        assert!((initial - len - total).abs() < 1e-9);
    }
}

#[test]
fn decomposition_is_deterministic() {
    let inst = generate_uniform(400, 2).unwrap();
    let cfg = DecomposeConfig { sub_length: 50, max_new: 40, ..Default::default() };
    assert_eq!(solve(&inst, cfg, 9).0, solve(&inst, cfg, 9).0);
}

#[test]
fn reference_tours_beat_the_hierarchical_heuristic() {
    let inst = generate_uniform(500, 4).unwrap();
    let (_, _, _, heuristic) = solve(&inst, DecomposeConfig::default(), 1);
    let reference = reference_tour(&inst, &ReferenceConfig { kicks: 200, ..Default::default() }).unwrap();
    assert!(tour_length(&inst, &reference).unwrap() < heuristic);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate_uniform(60, 5).unwrap();
    for (format, file) in [(Format::Json, "a.json"), (Format::Tsplib, "a.tsp")] {
        let path = dir.path().join(file);
        std::fs::write(&path, write_instance(&inst, format, "a")).unwrap();
        let (back, rescale) = read_instance(&std::fs::read(&path).unwrap(), format).unwrap();
        assert_eq!(back.n(), 60);
        for i in 0..60 {
            let p = rescale.to_original(back.point(i));
            assert!(p.dist(&inst.point(i)) < 1e-9);
        }
    }
    let (order, _, _, len) = solve(&inst, DecomposeConfig { sub_length: 20, max_new: 10, ..Default::default() }, 0);
    let tour = htsp_core::Tour::new(order);
    let (back, l) = read_tour(&write_tour(&tour, len)).unwrap();
    assert_eq!(back, tour);
    assert!((l - len).abs() < 1e-9);
}

proptest! {
    #[test]
    fn knn_matches_brute_force(coords in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..80), k in 1usize..12) {
        let inst = TspInstance::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect(), 0).unwrap();
        let k = k.min(inst.n() - 1);
        let knn = build_knn(&inst, k).unwrap();
        for i in 0..inst.n() {
            let mut d: Vec<f64> = (0..inst.n()).filter(|&j| j != i).map(|j| inst.cost(i, j)).collect();
            d.sort_by(f64::total_cmp);
            let got: Vec<f64> = knn.neighbors(i).iter().map(|&j| inst.cost(i, j)).collect();
            prop_assert_eq!(got.len(), k);
            prop_assert!(!knn.neighbors(i).contains(&i));
            for (a, b) in got.iter().zip(&d) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
