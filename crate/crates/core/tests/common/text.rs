/// LCS by trying every subsequence of `a`.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let is_subseq = |s: &[&String]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    (0u32..1 << a.len())
        .map(|mask| a.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, x)| x).collect::<Vec<_>>())
        .filter(|s| is_subseq(s))
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
}

/// Max matches, then min chunks, over every one-to-one exact alignment.
pub fn brute_meteor(c: &[String], r: &[String]) -> (usize, usize) {
    fn chunks(pairs: &[(usize, usize)]) -> usize {
        let mut p = pairs.to_vec();
        p.sort();
        let mut n = 0;
        for (k, &(i, j)) in p.iter().enumerate() {
            if k == 0 || !(i == p[k - 1].0 + 1 && j == p[k - 1].1 + 1) {
                n += 1;
            }
        }
        n
    }
    fn go(i: usize, c: &[String], r: &[String], used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == c.len() {
            let cand = (pairs.len(), chunks(pairs));
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                *best = cand;
            }
            return;
        }
        go(i + 1, c, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && c[i] == r[j] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}
