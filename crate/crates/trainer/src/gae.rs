use crate::config::CriticTarget;
use crate::error::{Error, Result};

/// Generalized advantage estimates for one finite episode, bootstrapping
/// with 0 after the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::Config(format!("{} rewards but {} values", rewards.len(), values.len())));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let next = values.get(t + 1).copied().unwrap_or(0.0);
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

pub fn value_targets(advantages: &[f64], values: &[f64], target: CriticTarget) -> Vec<f64> {
    advantages
        .iter()
        .enumerate()
        .map(|(t, a)| match target {
            CriticTarget::Current => a + values[t],
            CriticTarget::Next => a + values.get(t + 1).copied().unwrap_or(0.0),
        })
        .collect()
}

/// Shifts to mean 0 and scales to unit standard deviation (population).
/// Constant inputs only get centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(compute_gae(&[1.0], &[0.0], 0.9, 0.95).unwrap(), vec![1.0]);
        assert_eq!(compute_gae(&[1.0, 1.0], &[0.0, 0.0], 0.5, 1.0).unwrap(), vec![1.5, 1.0]);
        assert!(compute_gae(&[1.0], &[], 0.9, 0.9).is_err());
    }

    #[test]
    fn targets_and_normalization() {
        let adv = [1.0, 2.0];
        let v = [10.0, 20.0];
        assert_eq!(value_targets(&adv, &v, CriticTarget::Current), vec![11.0, 22.0]);
        assert_eq!(value_targets(&adv, &v, CriticTarget::Next), vec![21.0, 2.0]);
        let mut xs = [1.0, 3.0];
        normalize(&mut xs);
        assert_eq!(xs, [-1.0, 1.0]);
        let mut same = [2.0, 2.0];
        normalize(&mut same);
        assert_eq!(same, [0.0, 0.0]);
    }
}
