use tekg::density::{Density, DensityTable};
use tekg::learner::{Model, Scoring};
use tekg::metrics::forecast_resplit;
use tekg::miner::{read_rules, MinerConfig};
use tekg::pipeline::{densities_text, rules_text, run, PipelineConfig};
use tekg::synth::{generate_planted_tkg, PlantSpec};
use tekg::time::TimePoint;
use tekg::tkg::Schema;

fn small() -> (tekg::synth::SynthData, PipelineConfig) {
    let spec = PlantSpec::planted(Density::Gaussian { mu: 10.0, sigma: 1.0 }, 80, 0.3, 4);
    let data = generate_planted_tkg(&spec).unwrap();
    let mut cfg = PipelineConfig {
        seed: 2,
        ..PipelineConfig::default()
    };
    cfg.miner = MinerConfig {
        walks_per_predicate: 300,
        ..MinerConfig::for_schema(Schema::Timestamp)
    };
    cfg.train.epochs = 3;
    cfg.train.hidden = 8;
    cfg.train.embed = 4;
    (data, cfg)
}

#[test]
fn artifacts_round_trip() {
    let (data, cfg) = small();
    let r = run(&data.splits, &cfg).unwrap();
    let rules = rules_text(&r.mining.patterns, &r.graph).unwrap();
    let back = read_rules(std::str::from_utf8(&rules).unwrap(), r.graph.vocab()).unwrap();
    assert_eq!(back, r.mining.patterns);

    let dens = densities_text(&r.densities).unwrap();
    let table = DensityTable::read_tsv(std::str::from_utf8(&dens).unwrap()).unwrap();
    assert_eq!(densities_text(&table).unwrap(), dens);

    let model = Model::from_json(&r.trained.model.to_json().unwrap()).unwrap();
    assert_eq!(model.theta, r.trained.model.theta);
    model.check_inputs(&rules, &dens).unwrap();
    assert!(model.check_inputs(b"changed", &dens).is_err());
}

#[test]
fn runs_are_deterministic() {
    let (data, mut cfg) = small();
    cfg.train.scoring = Scoring::Rule;
    let a = run(&data.splits, &cfg).unwrap();
    let b = run(&data.splits, &cfg).unwrap();
    assert_eq!(a.trained.model.theta, b.trained.model.theta);
    let ea = a.evaluate(&data.splits, false).unwrap();
    let eb = b.evaluate(&data.splits, false).unwrap();
    assert_eq!(ea.predictions, eb.predictions);
    assert_eq!(ea.report.overall.count, data.splits.test.len());
}

#[test]
fn forecast_resplit_orders_by_start() {
    let (data, _) = small();
    let all: Vec<_> = data.splits.train.iter().chain(&data.splits.test).copied().collect();
    let [train, valid, test] = forecast_resplit(&all, TimePoint(1960), TimePoint(1980)).unwrap();
    assert_eq!(train.len() + valid.len() + test.len(), all.len());
    assert!(train.iter().all(|q| q.time.start.unwrap().0 < 1960));
    assert!(valid.iter().all(|q| (1960..1980).contains(&q.time.start.unwrap().0)));
    assert!(test.iter().all(|q| q.time.start.unwrap().0 >= 1980));
    assert!(forecast_resplit(&all, TimePoint(1980), TimePoint(1960)).is_err());
}
