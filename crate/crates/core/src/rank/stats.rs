//! Two-sample rank statistics.

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) p-value from the normal
/// approximation, with tie and continuity corrections.
///
/// Returns 1 when either sample is empty or every value is tied. The
/// statistic uses `min(U, n₁n₂ − U)` so swapping the samples gives the same
/// p-value bit for bit.
pub fn wilcoxon_ranksum(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return 1.0;
    }
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let total = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < total {
        let mut end = start + 1;
        while end < total && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let t = (end - start) as f64;
        let avg_rank = (start + end + 1) as f64 / 2.0;
        rank_sum_a += avg_rank * pooled[start..end].iter().filter(|p| p.1).count() as f64;
        tie_term += t * t * t - t;
        start = end;
    }

    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, total as f64);
    let u_a = rank_sum_a - n1f * (n1f + 1.0) / 2.0;
    let u = u_a.min(n1f * n2f - u_a);
    let mean = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((mean - u) - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
