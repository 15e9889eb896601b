use icrt::data::*;
use icrt::graph::Graph;
use icrt::model::*;
use icrt::runtime::build_seq_item;
use icrt::sim::*;
use std::path::Path;
use rand::SeedableRng;

fn row_variance(data: &[f32], rows: usize, dim: usize) -> f64 {
    // mean over dims of variance across rows
    let mut total = 0f64;
    for d in 0..dim {
        let mut m = 0f64; let mut m2 = 0f64;
        for r in 0..rows {
            let v = data[r*dim + d] as f64;
            m += v; m2 += v*v;
        }
        m /= rows as f64;
        total += m2 / rows as f64 - m*m;
    }
    (total / dim as f64).sqrt()
}

fn main() {
    let ds_path = std::env::args().nth(1).unwrap();
    let ckpt = std::env::args().nth(2).unwrap();
    let full = Dataset::load(Path::new(&ds_path)).unwrap();
    let ti = full.task_index("poke:yellow_sphere").unwrap();
    let mut ds = Dataset::new(vec!["poke:yellow_sphere".to_string()]);
    ds.trajectories = full.trajectories.iter().filter(|t| t.task == ti).take(6)
        .map(|t| Trajectory { task: 0, ..t.clone() }).collect();
    let model = Model::load(Path::new(&ckpt)).unwrap();
    let cfg = model.cfg;
    let groups = group_by_task(&ds).unwrap();
    let targets = precompute_chunk_targets(&ds).unwrap();
    let packed = pack_epoch(&ds, &targets, &groups, 112, 1, 3).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let item = build_seq_item(&ds, &packed[0], &cfg, &AugmentConfig::disabled(), &mut rng).unwrap();
    let n = item.n;

    println!("input variation (std across steps, mean over dims):");
    println!("  side patches: {:.5}", row_variance(item.side_patches.data(), n, 36*48));
    println!("  proprio:      {:.5}", row_variance(item.proprio.data(), n, 10));
    println!("  actions_in:   {:.5}", row_variance(item.actions_in.data(), n, 10));

    let mut g = Graph::<f32>::new();
    let pn = insert_params(&mut g, &model.weights, false);
    let tokens = encode_sequence_tokens(&mut g, &pn, &cfg, &item).unwrap();
    let tok = g.value(tokens);
    // state tokens at even rows, action tokens odd
    let state_rows: Vec<f32> = (0..n).flat_map(|i| tok.data()[(2*i)*cfg.dim..(2*i+1)*cfg.dim].to_vec()).collect();
    let act_rows: Vec<f32> = (0..n).flat_map(|i| tok.data()[(2*i+1)*cfg.dim..(2*i+2)*cfg.dim].to_vec()).collect();
    println!("state tokens: std-across-steps {:.5}, mean|value| {:.4}",
        row_variance(&state_rows, n, cfg.dim),
        state_rows.iter().map(|v| v.abs() as f64).sum::<f64>() / state_rows.len() as f64);
    println!("action tokens: std-across-steps {:.5}, mean|value| {:.4}",
        row_variance(&act_rows, n, cfg.dim),
        act_rows.iter().map(|v| v.abs() as f64).sum::<f64>() / act_rows.len() as f64);

    let lat = transformer_apply(&mut g, &pn, &cfg, tokens, 0).unwrap();
    let lv = g.value(lat);
    let state_lat: Vec<f32> = (0..n).flat_map(|i| lv.data()[(2*i)*cfg.dim..(2*i+1)*cfg.dim].to_vec()).collect();
    println!("state latents: std-across-steps {:.5}, mean|value| {:.4}",
        row_variance(&state_lat, n, cfg.dim),
        state_lat.iter().map(|v| v.abs() as f64).sum::<f64>() / state_lat.len() as f64);
}
