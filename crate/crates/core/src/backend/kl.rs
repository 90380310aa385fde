use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::{BackendError, Estimate, PatternBackend, Result, EOS};
use crate::seq::Sequence;

/// Probabilities of every continuation of length at most `horizon`.
/// Outcomes that stop early end in [`EOS`].
pub fn completion_outcomes<B: PatternBackend + ?Sized>(
    backend: &B,
    context: &Sequence,
    horizon: usize,
    budget: usize,
) -> Result<BTreeMap<Vec<String>, f64>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<(Vec<String>, f64)> = vec![(Vec::new(), 1.0)];
    let mut visited = 0usize;
    while let Some((prefix, mass)) = stack.pop() {
        let d = backend.next_distribution_after(context, &prefix)?;
        for (t, p) in &d.support {
            if *p <= 0.0 {
                continue;
            }
            visited += 1;
            if visited > budget {
                return Err(BackendError::VocabularyTooLarge { budget });
            }
            let mut next = prefix.clone();
            next.push(t.clone());
            if t == EOS || next.len() == horizon {
                *out.entry(next).or_insert(0.0) += mass * p;
            } else {
                stack.push((next, mass * p));
            }
        }
    }
    Ok(out)
}

/// Exact KL[p(·|c1) ‖ p(·|c2)] over continuations of length ≤ `horizon`.
pub fn kl_between<B: PatternBackend + ?Sized>(
    backend: &B,
    c1: &Sequence,
    c2: &Sequence,
    horizon: usize,
    budget: usize,
) -> Result<f64> {
    if horizon == 0 {
        return Err(BackendError::InvalidConfig("KL horizon must be at least 1".into()));
    }
    let p = completion_outcomes(backend, c1, horizon, budget)?;
    let q = completion_outcomes(backend, c2, horizon, budget)?;
    let mut kl = 0.0;
    for (x, px) in &p {
        let qx = q.get(x).copied().unwrap_or(0.0);
        if qx <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += px * (px / qx).ln();
    }
    Ok(kl.max(0.0))
}

/// Plug-in KL between two empirical distributions, with `pseudo` added to
/// the count of every outcome seen in either sample.
pub fn plug_in_kl(p_samples: &[String], q_samples: &[String], pseudo: f64) -> f64 {
    let outcomes: BTreeSet<&String> = p_samples.iter().chain(q_samples).collect();
    let k = outcomes.len() as f64;
    fn freq(s: &[String]) -> BTreeMap<&String, f64> {
        let mut m: BTreeMap<&String, f64> = BTreeMap::new();
        for x in s {
            *m.entry(x).or_default() += 1.0;
        }
        m
    }
    let (fp, fq) = (freq(p_samples), freq(q_samples));
    let (np, nq) = (p_samples.len() as f64, q_samples.len() as f64);
    let mut kl = 0.0;
    for x in outcomes {
        let p = (fp.get(x).copied().unwrap_or(0.0) + pseudo) / (np + pseudo * k);
        let q = (fq.get(x).copied().unwrap_or(0.0) + pseudo) / (nq + pseudo * k);
        if p > 0.0 {
            kl += p * (p / q).ln();
        }
    }
    kl.max(0.0)
}

/// Plug-in KL with a seeded bootstrap standard error.
pub fn monte_carlo_kl(p_samples: &[String], q_samples: &[String], pseudo: f64, resamples: usize, seed: u64) -> Estimate {
    let value = plug_in_kl(p_samples, q_samples, pseudo);
    if p_samples.is_empty() || q_samples.is_empty() || resamples < 2 {
        return Estimate { value, std_error: Some(f64::INFINITY) };
    }
    let mut rng = crate::rng::stream(seed);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let bp: Vec<String> = (0..p_samples.len()).map(|_| p_samples[rng.gen_range(0..p_samples.len())].clone()).collect();
        let bq: Vec<String> = (0..q_samples.len()).map(|_| q_samples[rng.gen_range(0..q_samples.len())].clone()).collect();
        stats.push(plug_in_kl(&bp, &bq, pseudo));
    }
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (stats.len() - 1) as f64;
    Estimate { value, std_error: Some(var.sqrt()) }
}
