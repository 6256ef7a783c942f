//! Diagnostics: how well do recovered dynamic features track truth, and
//! where does the error concentrate?

use placeval::config::RunConfig;
use placeval::experiment::run_listprice;
use placeval::features::{assemble_dataset, AggregationContext, LabelTransform};
use placeval::home::{attach_demographics, infer_homes_all};
use placeval::rng::sub_seed;
use placeval::synth::generate_city;
use placeval::trajectory::detect_stops_all;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn main() {
    let seed: u64 = std::env::args().nth(1).unwrap().parse().unwrap();
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
    let (rows, manifest, _) = assemble_dataset(
        &properties,
        &ctx,
        &demo,
        &cfg.aggregation_params(),
        LabelTransform::Identity,
        cfg.test_fraction,
        sub_seed(cfg.seed, "split"),
    )
    .unwrap();

    // recovered weekday traffic = mean people_in_area over dows 0..4
    let names = manifest.dynamic_names.clone();
    let idx: Vec<usize> = (0..5)
        .map(|d| names.iter().position(|n| *n == format!("people_in_area_{d}")).unwrap())
        .collect();
    let inc_idx: Vec<usize> = (0..5)
        .map(|d| names.iter().position(|n| *n == format!("avg_income_{d}")).unwrap())
        .collect();
    let recovered_traffic: Vec<f64> = rows
        .iter()
        .map(|r| idx.iter().map(|&j| r.dynamic_features[j]).sum::<f64>() / 5.0)
        .collect();
    let recovered_income: Vec<f64> = rows
        .iter()
        .map(|r| inc_idx.iter().map(|&j| r.dynamic_features[j]).sum::<f64>() / 5.0)
        .collect();
    let truth_traffic: Vec<f64> = city.truth.properties.iter().map(|t| t.weekday_traffic).collect();
    let truth_income: Vec<f64> = city.truth.properties.iter().map(|t| t.avg_visitor_income).collect();
    println!("traffic recovery r = {:.4}", pearson(&recovered_traffic, &truth_traffic));
    println!("income recovery r  = {:.4}", pearson(&recovered_income, &truth_income));
    let tmax = truth_traffic.iter().cloned().fold(0.0f64, f64::max);
    let tmean = truth_traffic.iter().sum::<f64>() / truth_traffic.len() as f64;
    println!("traffic mean {tmean:.1} max {tmax:.1}");
    let dyn_sd = {
        let parts: Vec<f64> = city.truth.properties.iter().map(|t| t.traffic_part + t.visitor_income_part).collect();
        let m = parts.iter().sum::<f64>() / parts.len() as f64;
        (parts.iter().map(|v| (v - m).powi(2)).sum::<f64>() / parts.len() as f64).sqrt()
    };
    println!("dynamic part sd = {dyn_sd:.0}");
    let report = run_listprice(&rows, &cfg).unwrap();
    println!(
        "improvement {:.1}% (dyn {:.3e} vs base {:.3e})",
        100.0 * report.relative_mse_improvement,
        report.dynamic_metrics.mse,
        report.baseline_metrics.mse
    );
}
