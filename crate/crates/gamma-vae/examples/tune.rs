// Temporary tuning harness; not part of the deliverable.
use gamma_vae::data::{gen_synthetic, normalize, split, NormScheme, SplitSpec, SyntheticKind};
use gamma_vae::evaluation::{embed, ood_consistency, pca_fit, pca_project, pca_reconstruct};
use gamma_vae::training::{train, TrainingConfig};
use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "a7".into());
    match which.as_str() {
        "a7" => a7(),
        "a8" => a8(),
        _ => eprintln!("unknown experiment"),
    }
}

fn a7() {
    let epochs: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);
    let start = Instant::now();
    for seed in 0..2u64 {
        let data = gen_synthetic(
            &SyntheticKind::LinearSubspace {
                n_features: 50,
                latent_dim: 2,
            },
            2000,
            0.05,
            100 + seed,
        )
        .unwrap();
        let (train_raw, held_raw) = split(
            &data,
            &SplitSpec::RandomFraction {
                fraction: 0.2,
                seed: 7,
            },
        )
        .unwrap();
        let (train_norm, record) = normalize(&train_raw, NormScheme::Standardize).unwrap();
        let held_norm = gamma_vae::data::apply_normalization(&held_raw, &record).unwrap();

        let config = TrainingConfig {
            gamma: 10.0,
            delta: 10.0,
            epochs,
            batch_size: 128,
            m_samples: 16,
            hidden_dims: vec![64],
            latent_dim: 2,
            seed,
            ..TrainingConfig::default()
        };
        let t0 = Instant::now();
        let out = train(&train_norm, &config).unwrap();
        let init = &out.log[0];
        let last = out.log.last().unwrap();
        let ratio = last.ex_max_sqrt / init.ex_mean.sqrt();

        // VAE reconstruction MSE on held-out.
        let emb = embed(&out.encoder, &held_raw, &record).unwrap();
        let mut vae_mse = 0.0;
        for i in 0..emb.num_samples() {
            let xh = out.decoder.forward(&emb.points.row(i).transpose()).unwrap();
            vae_mse += (held_norm.matrix.row(i).transpose() - xh).norm_squared();
        }
        vae_mse /= emb.num_samples() as f64;

        let pca = pca_fit(&train_norm.matrix, 2).unwrap();
        let proj = pca_project(&pca, &held_norm.matrix).unwrap();
        let rec = pca_reconstruct(&pca, &proj).unwrap();
        let pca_mse = (&rec - &held_norm.matrix).norm_squared() / held_norm.num_samples() as f64;

        println!(
            "seed {seed}: init ex_mean {:.4} sqrt {:.4} | final ex_max_sqrt {:.5} ratio {:.4} | recon {:.4} | vae_mse {:.4} pca_mse {:.4} ({:.2}x) | {:.1}s",
            init.ex_mean,
            init.ex_mean.sqrt(),
            last.ex_max_sqrt,
            ratio,
            last.recon,
            vae_mse,
            pca_mse,
            vae_mse / pca_mse,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}

fn a8() {
    let gamma: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.1);
    let epochs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);
    let trials: u64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let lr: f64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let start = Instant::now();
    let mut rhos_gamma = Vec::new();
    let mut rhos_beta = Vec::new();
    let data = gen_synthetic(
        &SyntheticKind::CurvedSheetClusters {
            n_features: 50,
            clusters: 6,
        },
        1200,
        0.05,
        42,
    )
    .unwrap();
    for seed in 0..trials {
        let (train_side, _held) = split(
            &data,
            &SplitSpec::HoldoutGroups {
                groups: vec!["c3".into()],
            },
        )
        .unwrap();
        for (g, rhos) in [(gamma, &mut rhos_gamma), (0.0, &mut rhos_beta)] {
            let t0 = Instant::now();
            let mk = |seed: u64| TrainingConfig {
                gamma: g,
                delta: g,
                epochs,
                batch_size: 128,
                m_samples: 16,
                hidden_dims: vec![64],
                latent_dim: 2,
                learning_rate: lr,
                seed,
                ..TrainingConfig::default()
            };
            let (full_norm, full_record) = normalize(&data, NormScheme::Standardize).unwrap();
            let full = train(&full_norm, &mk(seed)).unwrap();
            let (hold_norm, hold_record) = normalize(&train_side, NormScheme::Standardize).unwrap();
            let holdout = train(&hold_norm, &mk(seed + 1000)).unwrap();

            let full_emb = embed(&full.encoder, &data, &full_record).unwrap();
            let hold_emb = embed(&holdout.encoder, &data, &hold_record).unwrap();
            let report = ood_consistency(&full_emb, &hold_emb, "c3").unwrap();
            let last = full.log.last().unwrap();
            println!(
                "seed {seed} gamma {g}: rho {:.4} | recon {:.4} pe {:.4} ex {:.4} | {:.1}s",
                report.rho,
                last.recon,
                last.pe_mean,
                last.ex_mean,
                t0.elapsed().as_secs_f64()
            );
            rhos.push(report.rho);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!(
        "gamma median {:.4} beta median {:.4} | total {:.1}s",
        median(&mut rhos_gamma),
        median(&mut rhos_beta),
        start.elapsed().as_secs_f64()
    );
    let _ = DMatrix::<f64>::zeros(1, 1);
}
