//! Improvement-margin check for the list-price comparison across seeds.

use std::time::Instant;

use placeval::config::RunConfig;
use placeval::experiment::run_listprice;
use placeval::features::{assemble_dataset, AggregationContext, LabelTransform};
use placeval::home::{attach_demographics, infer_homes_all};
use placeval::rng::sub_seed;
use placeval::synth::generate_city;
use placeval::trajectory::detect_stops_all;

fn main() {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().unwrap())
        .collect();
    for seed in seeds {
        let t0 = Instant::now();
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.n_estimators = 80;
        let city = generate_city(&cfg.synth_spec()).unwrap();
        let stops = detect_stops_all(&city.pings, &cfg.stop_params());
        let mut homes = infer_homes_all(&stops, &cfg.home_params());
        let demo: std::collections::BTreeMap<_, _> = city
            .demographics
            .iter()
            .map(|d| (d.cbg_id.clone(), d.clone()))
            .collect();
        attach_demographics(&mut homes, &city.polygons, &demo);
        let mut properties = city.properties.clone();
        for p in properties.iter_mut() {
            p.cbg = placeval::geo::assign_cbg(p.loc, &city.polygons).map(str::to_string);
        }
        let ctx = AggregationContext::build(&stops, homes, cfg.grid_cell_deg).unwrap();
        let (rows, _, _) = assemble_dataset(
            &properties,
            &ctx,
            &demo,
            &cfg.aggregation_params(),
            LabelTransform::Identity,
            cfg.test_fraction,
            sub_seed(cfg.seed, "split"),
        )
        .unwrap();
        let report = run_listprice(&rows, &cfg).unwrap();
        println!(
            "seed {seed}: improvement {:.1}% (dyn mse {:.3e} base {:.3e}) r2 {:.3}/{:.3} in {:?}",
            100.0 * report.relative_mse_improvement,
            report.dynamic_metrics.mse,
            report.baseline_metrics.mse,
            report.dynamic_metrics.r2,
            report.baseline_metrics.r2,
            t0.elapsed()
        );
    }
}
