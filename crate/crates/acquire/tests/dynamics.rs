use acquire::dynamics::{generalized_kmeans, multiplicative_weights, KMeansOptions, MwOptions, MwUpdate};
use acquire::seeding::{acquire_seed, run_strategy};
use acquire::{rng, LossModel, Population, Strategy};
use rand::Rng as _;

fn instance(seed: u64, n: usize, loss: LossModel) -> Population {
    let mut r = rng::from_seed(seed);
    let phis = (0..n)
        .map(|i| {
            let shift = 8.0 * (i % 3) as f64;
            vec![shift + r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]
        })
        .collect();
    Population::uniform(phis, loss).unwrap()
}

#[test]
fn kmeans_is_monotone_and_stops_at_a_fixed_point() {
    for (i, loss) in [LossModel::sq_euclidean(2), LossModel::huber(1.0).unwrap(), LossModel::MetricL2]
        .into_iter()
        .enumerate()
    {
        for seed in 0..10u64 {
            let pop = instance(100 * i as u64 + seed, 15, loss.clone());
            let init = run_strategy(Strategy::Random, &pop, 3, seed).unwrap().services;
            let traj = generalized_kmeans(&pop, &init, KMeansOptions::default()).unwrap();
            assert!(traj.is_non_increasing());
            let again = generalized_kmeans(&pop, traj.final_services(), KMeansOptions::default()).unwrap();
            assert!(again.final_loss() >= traj.final_loss() * (1.0 - 1e-9) - 1e-12);
            assert!(again.final_loss() <= traj.final_loss());
            if i == 0 {
                assert_eq!(again.final_services(), traj.final_services());
            }
        }
    }
}

#[test]
fn hard_max_weights_track_kmeans() {
    for seed in 0..10u64 {
        let pop = instance(seed, 12, LossModel::sq_euclidean(2));
        let init = acquire_seed(&pop, 3, seed).unwrap().services;
        let km = generalized_kmeans(&pop, &init, KMeansOptions::default()).unwrap();
        let mw = multiplicative_weights(
            &pop,
            &init,
            MwOptions {
                eta: None,
                iters: 500,
                update: MwUpdate::HardMax,
            },
        )
        .unwrap();
        assert_eq!(mw.hard_loss, km.total_loss);
        assert_eq!(mw.final_services(), km.final_services());
    }
}

#[test]
fn exponential_weights_soft_loss_never_rises() {
    for seed in 0..10u64 {
        let pop = instance(seed + 50, 12, LossModel::sq_euclidean(2));
        let init = run_strategy(Strategy::Random, &pop, 3, seed).unwrap().services;
        for eta in [None, Some(0.05), Some(5.0)] {
            let traj = multiplicative_weights(
                &pop,
                &init,
                MwOptions {
                    eta,
                    iters: 200,
                    update: MwUpdate::Exponential,
                },
            )
            .unwrap();
            assert!(traj.is_non_increasing(), "seed {seed}, eta {eta:?}");
        }
    }
}
