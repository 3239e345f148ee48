// Scratch experiment driver used while sizing the acceptance suite; not
// part of the public surface.
use std::time::Instant;

use tailcal::calib::ForecastCase;
use tailcal::data::{generate_synth, SynthConfig};
use tailcal::dist::Distribution;
use tailcal::emos::{
    cluster_stations, default_optimizer, emos_fit, emos_link, observations_by_station,
    split_by_cluster,
};
use tailcal::genmodels::{run_replicates, NetworkFamily, SuiteConfig, TrainConfig};
use tailcal::loss::{BaseScore, LossSpec, PenaltyKind};
use tailcal::metrics::{evaluate_cases, MetricSet};

const T: f64 = 12.5;

fn emos_eval(params: &tailcal::emos::EmosParams, rows: &[tailcal::data::WeatherRow]) -> MetricSet {
    let cases: Vec<ForecastCase> = rows
        .iter()
        .map(|r| {
            let d = emos_link(params, r.ens_mean, r.ens_sd, r.doy as f64);
            ForecastCase::new(Distribution::TruncNormal(d), r.obs)
        })
        .collect();
    evaluate_cases(&cases, T, 7777).unwrap()
}

fn summarize(tag: &str, base: &[MetricSet], tuned: &[MetricSet], pick: fn(&MetricSet) -> f64) {
    let n = base.len();
    let wins = base.iter().zip(tuned).filter(|(b, t)| pick(t) < pick(b)).count();
    let mb = base.iter().map(|m| pick(m)).sum::<f64>() / n as f64;
    let mt = tuned.iter().map(|m| pick(m)).sum::<f64>() / n as f64;
    println!("  {tag}: wins {wins}/{n}, mean {mb:.4} -> {mt:.4}");
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if which == "emos" || which == "all" {
        println!("== EMOS (10 dataset replicates) ==");
        let t0 = Instant::now();
        let mut results: Vec<(MetricSet, Vec<(PenaltyKind, MetricSet)>)> = Vec::new();
        for seed in 0..10u64 {
            let data = generate_synth(&SynthConfig {
                station_count: 8,
                train_days: 350,
                test_days: 350,
                seed,
                tail_misspecification: true,
                ..Default::default()
            })
            .unwrap();
            let clustering =
                cluster_stations(&observations_by_station(&data.train), 4, 9, seed).unwrap();
            let train = split_by_cluster(&data.train, &clustering).unwrap();
            let base_spec = LossSpec::baseline(BaseScore::CrpsClosed, T);
            let cfg = default_optimizer();
            let base_fit = emos_fit(&train, &base_spec, &cfg).unwrap();
            let eval_fit = |fit: &tailcal::emos::EmosFit| -> MetricSet {
                // per-cluster predictions
                let cases: Vec<ForecastCase> = data
                    .test
                    .iter()
                    .map(|r| {
                        let c = clustering.cluster_of(&r.station_id).unwrap();
                        let d = emos_link(&fit.params[c], r.ens_mean, r.ens_sd, r.doy as f64);
                        ForecastCase::new(Distribution::TruncNormal(d), r.obs)
                    })
                    .collect();
                evaluate_cases(&cases, T, 7777).unwrap()
            };
            let base_m = eval_fit(&base_fit);
            let mut tuned = Vec::new();
            for (penalty, gamma) in [
                (PenaltyKind::Tmcb, 5.0),
                (PenaltyKind::Mcb, 5.0),
                (PenaltyKind::Weighted, 5.0),
                (PenaltyKind::CpitMcb, 10.0),
            ] {
                let spec = base_spec.with_penalty(penalty, gamma);
                let fit = emos_fit(&train, &spec, &cfg).unwrap();
                tuned.push((penalty, eval_fit(&fit)));
            }
            results.push((base_m, tuned));
        }
        println!("elapsed {:.1?}", t0.elapsed());
        let base: Vec<MetricSet> = results.iter().map(|r| r.0).collect();
        println!(
            "baseline: mean mcb {:.4}, mean tmcb {:.4}, mean crps {:.4}",
            base.iter().map(|m| m.mcb).sum::<f64>() / 10.0,
            base.iter().map(|m| m.tmcb).sum::<f64>() / 10.0,
            base.iter().map(|m| m.crps).sum::<f64>() / 10.0,
        );
        for (i, penalty) in
            [PenaltyKind::Tmcb, PenaltyKind::Mcb, PenaltyKind::Weighted, PenaltyKind::CpitMcb]
                .iter()
                .enumerate()
        {
            let tuned: Vec<MetricSet> = results.iter().map(|r| r.1[i].1).collect();
            println!("penalty {penalty:?}:");
            summarize("tmcb", &base, &tuned, |m| m.tmcb);
            summarize("mcb ", &base, &tuned, |m| m.mcb);
            summarize("crps", &base, &tuned, |m| m.crps);
            summarize("cpit", &base, &tuned, |m| m.cpit_mcb);
        }
        // (d): CRPS degradation of weighted vs tmcb, per replicate.
        let d_wins = results
            .iter()
            .filter(|r| (r.1[2].1.crps - r.0.crps) < (r.1[0].1.crps - r.0.crps))
            .count();
        println!("(d) smaller crps degradation weighted vs tmcb: {d_wins}/10");
        let _ = emos_eval;
    }

    if which == "drn" || which == "all" {
        println!("== DRN suite ==");
        let t0 = Instant::now();
        let data = generate_synth(&SynthConfig {
            station_count: 8,
            train_days: 700,
            test_days: 700,
            seed: 42,
            tail_misspecification: true,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = SuiteConfig::desk_default(NetworkFamily::Drn, T);
        cfg.replicates = 10;
        cfg.gammas = vec![5.0, 10.0];
        cfg.train = TrainConfig {
            hidden: vec![16, 16],
            epochs: 150,
            batch_size: 512,
            learning_rate: 3e-3,
            members: 0,
            seed: 0,
        };
        cfg.eval_members = 0;
        let suite = run_replicates(NetworkFamily::Drn, &data.train, &data.test, &cfg);
        println!("elapsed {:.1?}, failures {:?}", t0.elapsed(), suite.failures);
        for g in [5.0, 10.0] {
            println!("--- gamma {g} ---");
            report_suite_g(&suite, g);
        }
    }

    if which == "cgm" || which == "all" {
        println!("== CGM suite ==");
        let t0 = Instant::now();
        let data = generate_synth(&SynthConfig {
            station_count: 6,
            train_days: 300,
            test_days: 500,
            seed: 43,
            tail_misspecification: true,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = SuiteConfig::desk_default(NetworkFamily::Cgm, T);
        cfg.replicates = 10;
        cfg.train = TrainConfig {
            hidden: vec![16, 16],
            epochs: 60,
            batch_size: 512,
            learning_rate: 3e-3,
            members: 100,
            seed: 0,
        };
        cfg.pit_smoothing = 0.1;
        cfg.fair_members = 25;
        cfg.penalty_members = 100;
        cfg.eval_members = 200;
        let suite = run_replicates(NetworkFamily::Cgm, &data.train, &data.test, &cfg);
        println!("elapsed {:.1?}, failures {:?}", t0.elapsed(), suite.failures);
        report_suite_g(&suite, 5.0);
    }
}

fn report_suite_g(suite: &tailcal::genmodels::ReplicateSuite, gamma: f64) {
    report_suite_inner(suite, gamma)
}

#[allow(dead_code)]
fn report_suite(suite: &tailcal::genmodels::ReplicateSuite) {
    report_suite_inner(suite, 5.0)
}

fn report_suite_inner(suite: &tailcal::genmodels::ReplicateSuite, gamma: f64) {
    let base: Vec<MetricSet> = suite.metrics_for("none", 0.0).into_iter().map(|(_, m)| m).collect();
    let n = base.len() as f64;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = |xs: &[f64]| {
        let m = mean(xs);
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
    };
    let crps: Vec<f64> = base.iter().map(|m| m.crps).collect();
    let tmcb: Vec<f64> = base.iter().map(|m| m.tmcb).collect();
    println!(
        "baseline: mean mcb {:.4}, mean tmcb {:.4} (sd {:.4}), mean crps {:.4} (sd {:.5})",
        base.iter().map(|m| m.mcb).sum::<f64>() / n,
        mean(&tmcb),
        sd(&tmcb),
        mean(&crps),
        sd(&crps),
    );
    println!(
        "  cv(tmcb) = {:.3}, cv(crps) = {:.4}, ratio {:.1}",
        sd(&tmcb) / mean(&tmcb),
        sd(&crps) / mean(&crps),
        (sd(&tmcb) / mean(&tmcb)) / (sd(&crps) / mean(&crps))
    );
    for penalty in ["tmcb", "mcb", "weighted", "cpit-mcb"] {
        let tuned: Vec<MetricSet> =
            suite.metrics_for(penalty, gamma).into_iter().map(|(_, m)| m).collect();
        if tuned.is_empty() {
            continue;
        }
        println!("penalty {penalty}:");
        let pick_all: [(&str, fn(&MetricSet) -> f64); 4] = [
            ("tmcb", |m| m.tmcb),
            ("mcb ", |m| m.mcb),
            ("crps", |m| m.crps),
            ("cpit", |m| m.cpit_mcb),
        ];
        for (tag, pick) in pick_all {
            let wins = base.iter().zip(&tuned).filter(|(b, t)| pick(t) < pick(b)).count();
            println!(
                "  {tag}: wins {wins}/{}, mean {:.4} -> {:.4} (sd {:.4} -> {:.4})",
                base.len(),
                mean(&base.iter().map(|m| pick(m)).collect::<Vec<_>>()),
                mean(&tuned.iter().map(|m| pick(m)).collect::<Vec<_>>()),
                sd(&base.iter().map(|m| pick(m)).collect::<Vec<_>>()),
                sd(&tuned.iter().map(|m| pick(m)).collect::<Vec<_>>()),
            );
        }
    }
    // (d): per-replicate crps degradation comparison weighted vs tmcb
    let tw: Vec<MetricSet> =
        suite.metrics_for("weighted", gamma).into_iter().map(|(_, m)| m).collect();
    let tm: Vec<MetricSet> = suite.metrics_for("tmcb", gamma).into_iter().map(|(_, m)| m).collect();
    if tw.len() == base.len() && tm.len() == base.len() {
        let wins = (0..base.len())
            .filter(|&i| (tw[i].crps - base[i].crps) < (tm[i].crps - base[i].crps))
            .count();
        println!("(d) smaller crps degradation weighted vs tmcb: {wins}/{}", base.len());
    }
}
