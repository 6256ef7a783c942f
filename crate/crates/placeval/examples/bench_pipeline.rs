//! Rough end-to-end timing at the default city scale.
//!
//! Run with: cargo run --example bench_pipeline

use std::time::Instant;

use placeval::config::RunConfig;
use placeval::features::{assemble_dataset, AggregationContext};
use placeval::home::{attach_demographics, infer_homes_all};
use placeval::ml::{fit_stacked, SecondInput, StackedParams};
use placeval::rng::sub_seed;
use placeval::synth::generate_city;
use placeval::trajectory::detect_stops_all;

fn main() {
    let cfg = RunConfig::default();
    let t0 = Instant::now();
    let city = generate_city(&cfg.synth_spec()).unwrap();
    let n_pings: usize = city.pings.values().map(Vec::len).sum();
    println!("generate: {:?} ({n_pings} pings)", t0.elapsed());

    let t = Instant::now();
    let stops = detect_stops_all(&city.pings, &cfg.stop_params());
    println!("stops: {:?} ({} stops)", t.elapsed(), stops.len());

    let t = Instant::now();
    let mut homes = infer_homes_all(&stops, &cfg.home_params());
    let demo: std::collections::BTreeMap<String, placeval::home::CbgDemographics> = city
        .demographics
        .iter()
        .map(|d| (d.cbg_id.clone(), d.clone()))
        .collect();
    attach_demographics(&mut homes, &city.polygons, &demo);
    println!("homes: {:?} ({} homes)", t.elapsed(), homes.len());

    let t = Instant::now();
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
        placeval::features::LabelTransform::Identity,
        cfg.test_fraction,
        sub_seed(cfg.seed, "split"),
    )
    .unwrap();
    println!("features: {:?} ({} rows)", t.elapsed(), rows.len());

    for n_estimators in [50usize, 100, 300] {
        let t = Instant::now();
        let params = StackedParams {
            n_estimators,
            seed: sub_seed(cfg.seed, "stacked"),
            second_input: SecondInput::Dynamic,
            ..Default::default()
        };
        let model = fit_stacked(&rows[..1800], &params).unwrap();
        let m = model.evaluate(&rows[1800..]).unwrap();
        println!(
            "stacked dynamic n={n_estimators}: {:?} (holdout mse {:.3e} r2 {:.3})",
            t.elapsed(),
            m.mse,
            m.r2
        );
    }
}
