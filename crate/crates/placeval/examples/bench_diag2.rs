//! Component-level look at one seed's stacked comparison.

use placeval::config::RunConfig;
use placeval::features::{assemble_dataset, AggregationContext, LabelTransform};
use placeval::home::{attach_demographics, infer_homes_all};
use placeval::ml::{fit_stacked, metrics, split_indices, SecondInput, StackedParams};
use placeval::rng::sub_seed;
use placeval::synth::generate_city;
use placeval::trajectory::detect_stops_all;

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
    let (rows, _, _) = assemble_dataset(
        &properties, &ctx, &demo, &cfg.aggregation_params(),
        LabelTransform::Identity, cfg.test_fraction, sub_seed(cfg.seed, "split"),
    ).unwrap();

    let (train_idx, test_idx) = split_indices(rows.len(), cfg.test_fraction, sub_seed(cfg.seed, "split")).unwrap();
    let train: Vec<_> = train_idx.iter().map(|&r| rows[r].clone()).collect();
    let test: Vec<_> = test_idx.iter().map(|&r| rows[r].clone()).collect();
    let labels: Vec<f64> = test.iter().map(|r| r.label).collect();

    for (name, input) in [("dynamic", SecondInput::Dynamic), ("baseline", SecondInput::Static)] {
        let params = StackedParams {
            n_estimators: 80,
            seed: sub_seed(cfg.seed, "stacked"),
            second_input: input,
            ..Default::default()
        };
        let model = fit_stacked(&train, &params).unwrap();
        let meta = &model.meta;
        let preds_a: Vec<f64> = test.iter().map(|r| model.static_forest.predict_row(&r.static_features)).collect();
        let preds_b: Vec<f64> = test.iter().map(|r| match input {
            SecondInput::Static => model.second_forest.predict_row(&r.static_features),
            SecondInput::Dynamic => model.second_forest.predict_row(&r.dynamic_features),
        }).collect();
        let combined = model.evaluate(&test).unwrap();
        let ma = metrics(&preds_a, &labels).unwrap();
        let mb = metrics(&preds_b, &labels).unwrap();
        println!(
            "{name}: meta coef {:?} intercept {:.0} | rf_a mse {:.3e} rf_b mse {:.3e} stack mse {:.3e}",
            meta.coefficients, meta.intercept, ma.mse, mb.mse, combined.mse
        );
    }
}
