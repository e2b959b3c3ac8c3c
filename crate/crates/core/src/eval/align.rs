//! Minimum-edit-distance alignment between a label and a prediction.

/// Unit-cost Levenshtein distance.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    table(a, b)[a.len()][b.len()]
}

fn table(a: &[u32], b: &[u32]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// For every character of `truth`, whether an optimal alignment pairs it
/// with an identical predicted character. Among optimal alignments the
/// backtrace prefers match, then substitution, then deletion (truth
/// character unpaired), then insertion.
pub fn aligned_matches(truth: &[u32], pred: &[u32]) -> Vec<bool> {
    let d = table(truth, pred);
    let mut hits = vec![false; truth.len()];
    let (mut i, mut j) = (truth.len(), pred.len());
    while i > 0 || j > 0 {
        let cur = d[i][j];
        if i > 0 && j > 0 {
            let same = truth[i - 1] == pred[j - 1];
            if same && d[i - 1][j - 1] == cur {
                hits[i - 1] = true;
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && d[i - 1][j - 1] + 1 == cur {
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i - 1][j] + 1 == cur {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    hits
}
