use tailcal::data::{generate_synth, SynthConfig};
use tailcal::genmodels::*;
use tailcal::loss::{BaseScore, LossSpec, PenaltyKind};

fn main() {
    let data = generate_synth(&SynthConfig {
        station_count: 6, train_days: 300, test_days: 500, seed: 43,
        tail_misspecification: true, ..Default::default()
    }).unwrap();
    let t = 12.5;
    let mut train_cfg = TrainConfig {
        hidden: vec![16, 16], epochs: 60, batch_size: 512,
        learning_rate: 3e-3, members: 100, seed: 0,
    };
    for rep in [0u64, 1, 2] {
        train_cfg.seed = 100 + rep;
        let (baseline, _) = cgm_train(&data.train, &train_cfg).unwrap();
        let eval = |m: &CgmModel, rows: &[tailcal::data::WeatherRow]| {
            evaluate_network(NetworkFamily::Cgm, None, Some(m), rows, t, 200, 7777).unwrap()
        };
        let base_train = eval(&baseline, &data.train);
        let base_test = eval(&baseline, &data.test);
        let spec = LossSpec {
            base: BaseScore::FairCrps, penalty: PenaltyKind::Tmcb, gamma: 5.0,
            threshold: t, divergence: Default::default(), pit_smoothing: Some(0.1),
        };
        let mut tuned = baseline.clone();
        let summary = cgm_finetune(&mut tuned, &data.train, &spec, 50, 1e-3, 25, 100, 100 + rep).unwrap();
        let tuned_train = eval(&tuned, &data.train);
        let tuned_test = eval(&tuned, &data.test);
        println!(
            "rep {rep}: obj {:.4}->{:.4} | train tmcb {:.4}->{:.4} | test tmcb {:.4}->{:.4} | test crps {:.4}->{:.4}",
            summary.initial_loss, summary.final_loss,
            base_train.tmcb, tuned_train.tmcb,
            base_test.tmcb, tuned_test.tmcb,
            base_test.crps, tuned_test.crps,
        );
    }
}
