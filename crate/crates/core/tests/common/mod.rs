//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the planner, selector or scorer it is used to check.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use codesift::pack::{PackItem, PackPlan, PackStrategy};

pub const V: f64 = 257.0;

/// Per-sample `(ppl_cond, ppl_uncond, ifd)` for an add-k bigram model trained on
/// the same samples, from explicit count tables and a direct probability product.
pub fn bigram_oracle(samples: &[(&str, &str)], k: f64) -> Vec<(f64, f64, f64)> {
    let mut unigram: HashMap<u8, f64> = HashMap::new();
    let mut total = 0.0;
    let mut pair: HashMap<(u8, u8), f64> = HashMap::new();
    let mut ctx: HashMap<u8, f64> = HashMap::new();
    for (i, c) in samples {
        let s: Vec<u8> = i.bytes().chain(c.bytes()).collect();
        for (p, &t) in s.iter().enumerate() {
            *unigram.entry(t).or_default() += 1.0;
            total += 1.0;
            if p > 0 {
                *pair.entry((s[p - 1], t)).or_default() += 1.0;
                *ctx.entry(s[p - 1]).or_default() += 1.0;
            }
        }
    }
    let prob = |prev: Option<u8>, t: u8| match prev {
        None => (unigram.get(&t).copied().unwrap_or(0.0) + k) / (total + k * V),
        Some(a) => (pair.get(&(a, t)).copied().unwrap_or(0.0) + k) / (ctx.get(&a).copied().unwrap_or(0.0) + k * V),
    };
    samples
        .iter()
        .map(|(i, c)| {
            let code = c.as_bytes();
            let n = code.len() as f64;
            let mut cond = 1.0f64;
            let mut uncond = 1.0f64;
            for (j, &t) in code.iter().enumerate() {
                let prev_u = if j > 0 { Some(code[j - 1]) } else { None };
                let prev_c = prev_u.or_else(|| i.as_bytes().last().copied());
                cond *= prob(prev_c, t);
                uncond *= prob(prev_u, t);
            }
            let pc = cond.powf(-1.0 / n);
            let pu = uncond.powf(-1.0 / n);
            (pc, pu, pc / pu)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Indices chosen by sorting each cluster by (IFD desc, index asc) and
/// keeping the first `ceil(m * n_c / 100)`; integer `m` only.
pub fn brute_force_select(assignment: &[usize], ifd: &[f64], k: usize, m: usize) -> HashSet<usize> {
    let mut out = HashSet::new();
    for c in 0..k {
        let mut members: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == c).collect();
        members.sort_by(|&a, &b| ifd[b].partial_cmp(&ifd[a]).unwrap().then(a.cmp(&b)));
        let take = (m * members.len()).div_ceil(100);
        out.extend(members.into_iter().take(take));
    }
    out
}

/// Minimum bin count by dynamic programming over item subsets.
pub fn exhaustive_min_bins(lengths: &[usize], capacity: usize) -> usize {
    let n = lengths.len();
    assert!(n <= 16);
    let full = (1usize << n) - 1;
    let fits: Vec<bool> = (0..=full)
        .map(|s| (0..n).filter(|&i| s >> i & 1 == 1).map(|i| lengths[i]).sum::<usize>() <= capacity)
        .collect();
    let mut best = vec![usize::MAX; full + 1];
    best[0] = 0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // enumerate subsets of `rest`, always including the lowest item
        let mut sub = rest;
        loop {
            let s = sub | low;
            if fits[s] && best[mask ^ s] != usize::MAX {
                best[mask] = best[mask].min(best[mask ^ s] + 1);
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    best[full]
}

/// Conservation, capacity, contiguity and cell accounting of a no-truncation plan.
pub fn check_plan(items: &[PackItem], plan: &PackPlan) -> Result<(), String> {
    let want: HashMap<&str, usize> = items.iter().map(|it| (it.id.as_str(), it.len)).collect();
    let mut seen = HashSet::new();
    let mut real = 0u64;
    let mut cells = 0u64;
    if plan.batches.len() != plan.padded_widths.len() {
        return Err("one padded width per batch".into());
    }
    for (batch, &w) in plan.batches.iter().zip(&plan.padded_widths) {
        let widest = batch.iter().map(|b| b.used).max().unwrap_or(0);
        let expected = if plan.strategy == PackStrategy::PadToMax { plan.context_len } else { widest };
        if w != expected {
            return Err(format!("width {w}, expected {expected}"));
        }
        for bin in batch {
            if bin.used > plan.context_len {
                return Err(format!("row uses {} > {}", bin.used, plan.context_len));
            }
            let mut offset = 0;
            for seg in &bin.segments {
                if seg.start != offset {
                    return Err(format!("segment {} starts at {} not {}", seg.id, seg.start, offset));
                }
                offset += seg.len;
                match want.get(seg.id.as_str()) {
                    Some(&len) if len == seg.len => {}
                    _ => return Err(format!("segment {} has wrong length or unknown id", seg.id)),
                }
                if !seen.insert(seg.id.clone()) {
                    return Err(format!("{} packed twice", seg.id));
                }
            }
            if offset != bin.used {
                return Err("used differs from segment total".into());
            }
            real += bin.used as u64;
        }
        cells += (batch.len() * w) as u64;
    }
    if seen.len() != items.len() {
        return Err(format!("{} of {} ids packed", seen.len(), items.len()));
    }
    let input: u64 = items.iter().map(|it| it.len as u64).sum();
    let s = &plan.stats;
    if real != input || s.total_real_tokens != input {
        return Err("token totals not preserved".into());
    }
    if s.total_cells != cells || s.total_cells != s.total_real_tokens + s.total_padding_tokens {
        return Err("cell accounting inconsistent".into());
    }
    Ok(())
}

/// Cells of one batch padded to its longest sample, and to the context.
pub fn baseline_cells(group: &[usize], context_len: usize) -> (u64, u64) {
    let longest = group.iter().copied().max().unwrap_or(0);
    ((group.len() * longest) as u64, (group.len() * context_len) as u64)
}

pub fn items(lengths: &[usize]) -> Vec<PackItem> {
    lengths.iter().enumerate().map(|(i, &l)| PackItem::new(format!("s{i}"), l)).collect()
}
