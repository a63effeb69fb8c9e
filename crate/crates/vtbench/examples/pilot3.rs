// Trajectory inspection for a failing GunPoint seed (removed before release).

use vtbench::chart::{ChartSpec, ChartType, ColorMode, LabelMode};
use vtbench::dataset::{load_ucr_split, stratified_holdout_indices, Split};
use vtbench::encoders::CnnBackbone;
use vtbench::model::{ModelConfig, VtbModel};
use vtbench::train::{evaluate, train, PreparedSplit, TrainConfig};

fn main() {
    let data_root = std::path::Path::new("data");
    let cache = std::path::Path::new("/tmp/pilot-cache");
    let train_set = load_ucr_split(data_root, "GunPoint", Split::Train).unwrap();
    let test_set = load_ucr_split(data_root, "GunPoint", Split::Test).unwrap();
    let spec = ChartSpec::new(ChartType::Line, ColorMode::Color, LabelMode::NoLabel, 128);
    let (val_idx, test_idx) = stratified_holdout_indices(&test_set, 0.2, 42).unwrap();
    let load = |set: &vtbench::dataset::LabeledSeriesSet, split: Split, idxs: &[usize]| {
        let images: Vec<Vec<u8>> = idxs
            .iter()
            .map(|&i| {
                vtbench::chart::cache::load_cached_rgb(cache, &set.meta.name, split, i, &spec)
                    .unwrap()
            })
            .collect();
        PreparedSplit {
            branches: vec![images],
            series: idxs.iter().map(|&i| set.instances[i].values.clone()).collect(),
            labels: idxs.iter().map(|&i| set.instances[i].label).collect(),
            resolution: 128,
            t_len: set.meta.t_len,
        }
    };
    let all: Vec<usize> = (0..train_set.len()).collect();
    let tr = load(&train_set, Split::Train, &all);
    let va = load(&test_set, Split::Test, &val_idx);
    let te = load(&test_set, Split::Test, &test_idx);

    for (name, tc) in [
        ("bs16_sched", TrainConfig { batch_size: 16, ..Default::default() }),
        ("bs16_nosched", TrainConfig { batch_size: 16, scheduler_patience: 10_000, ..Default::default() }),
    ] {
        for seed in [44u64, 46] {
            let cfg = ModelConfig::single_chart(CnnBackbone::Deep, 128, 2, seed);
            let mut model = VtbModel::build(&cfg).unwrap();
            let history = train(&mut model, &tr, &va, &tc, seed).unwrap();
            let m = evaluate(&mut model, &te).unwrap();
            println!("== {name} seed {seed}: TEST {:.4}", m.accuracy);
            for (i, h) in history.iter().enumerate() {
                println!(
                    "  ep {:>2}: train_loss {:.4} val_loss {:.4} val_acc {:.3} lr {:.2e}",
                    i + 1,
                    h.train_loss,
                    h.val_loss,
                    h.val_acc,
                    h.lr
                );
            }
        }
    }
}
