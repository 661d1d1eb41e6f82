//! The multi-positive InfoNCE kernel: loss values on interpretable cases
//! and a finite-difference verification of the analytic gradients.
//!
//!     cargo run -p termstream --example contrastive_gradcheck

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use termstream::contrastive::{finite_diff_check, infonce_grad, infonce_loss, ContrastiveBatch};

fn random_unit(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn basis(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tau = 0.03;

    // No negatives: numerator equals denominator, loss is exactly zero.
    let only_positives =
        ContrastiveBatch::new(basis(4, 0), vec![basis(4, 1)], vec![], tau)?;
    println!("loss with no negatives      {:e}", infonce_loss(&only_positives)?);

    // One positive and one negative at equal similarity: a coin flip, ln 2.
    let coin_flip = ContrastiveBatch::new(
        basis(4, 0),
        vec![basis(4, 1)],
        vec![basis(4, 2)],
        tau,
    )?;
    println!("loss at equal similarity    {:.12}", infonce_loss(&coin_flip)?);

    // Perfectly separated pair: positive at +1, negative at -1.
    let separated = ContrastiveBatch::new(
        basis(4, 0),
        vec![basis(4, 0)],
        vec![basis(4, 0).iter().map(|x| -x).collect()],
        tau,
    )?;
    println!("loss when fully separated   {:e}", infonce_loss(&separated)?);

    // Random batch: analytic gradients vs central finite differences.
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let batch = ContrastiveBatch::new(
        random_unit(&mut rng, 16),
        (0..3).map(|_| random_unit(&mut rng, 16)).collect(),
        (0..5).map(|_| random_unit(&mut rng, 16)).collect(),
        tau,
    )?;
    println!("\nrandom batch: 3 positives, 5 negatives, dim 16, tau {tau}");
    println!("loss                        {:.6}", infonce_loss(&batch)?);
    let grads = infonce_grad(&batch)?;
    let anchor_norm: f64 = grads.anchor.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("anchor gradient norm        {anchor_norm:.6}");
    let report = finite_diff_check(&batch, 1e-4)?;
    println!(
        "finite-difference check     max rel error {:.3e} at {:?}[{}]",
        report.max_rel_error, report.argmax_vector, report.argmax_coord
    );
    Ok(())
}
