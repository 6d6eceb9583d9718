//! Counting metrics.
//!
//! * OBO: fraction of videos with `|c̃ − c| ≤ 1`.
//! * MAE: mean of `|c̃ − c| / c̃`, the error relative to the true count.
//!
//! Videos with a true count of zero have no relative error; they are kept in
//! the report and in OBO but flagged and left out of MAE.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub video_id: String,
    pub true_count: f64,
    pub predicted: f64,
    /// True when `true_count == 0`, so the video has no MAE term.
    pub excluded_from_mae: bool,
}

impl VideoResult {
    pub fn abs_error(&self) -> f64 {
        (self.true_count - self.predicted).abs()
    }

    pub fn obo_hit(&self) -> bool {
        self.abs_error() <= 1.0
    }

    pub fn relative_error(&self) -> Option<f64> {
        (!self.excluded_from_mae).then(|| self.abs_error() / self.true_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub obo: f64,
    pub per_video: Vec<VideoResult>,
}

impl EvalReport {
    /// Builds a report from `(video_id, true count, predicted count)` rows.
    pub fn from_counts<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, f64, f64)>,
        S: Into<String>,
    {
        let per_video: Vec<VideoResult> = rows
            .into_iter()
            .map(|(id, t, p)| VideoResult {
                video_id: id.into(),
                true_count: t,
                predicted: p,
                excluded_from_mae: t == 0.0,
            })
            .collect();
        let n = per_video.len();
        let obo = if n == 0 {
            0.0
        } else {
            per_video.iter().filter(|v| v.obo_hit()).count() as f64 / n as f64
        };
        let terms: Vec<f64> = per_video.iter().filter_map(VideoResult::relative_error).collect();
        let mae = if terms.is_empty() {
            0.0
        } else {
            terms.iter().sum::<f64>() / terms.len() as f64
        };
        Self {
            mae,
            obo,
            per_video,
        }
    }

    pub fn excluded(&self) -> impl Iterator<Item = &VideoResult> {
        self.per_video.iter().filter(|v| v.excluded_from_mae)
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("video_id,true_count,predicted_count,abs_error,relative_error,obo_hit\n");
        for v in &self.per_video {
            let rel = v
                .relative_error()
                .map_or_else(|| "excluded".to_string(), |r| format!("{r:.6}"));
            writeln!(
                s,
                "{},{},{:.6},{:.6},{},{}",
                v.video_id,
                v.true_count,
                v.predicted,
                v.abs_error(),
                rel,
                u8::from(v.obo_hit())
            )
            .unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "MAE {:.4}, OBO {:.4} over {} videos\n",
            self.mae,
            self.obo,
            self.per_video.len()
        );
        for v in self.excluded() {
            writeln!(s, "warning: {} has true count 0, excluded from MAE", v.video_id).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_counts([("a", 3.0, 3.0), ("b", 7.0, 7.0)]);
        assert_eq!((r.mae, r.obo), (0.0, 1.0));
        assert!(r.summary().starts_with("MAE 0.0000, OBO 1.0000"));
    }

    #[test]
    fn off_by_one_counts_as_hit() {
        let r = EvalReport::from_counts([("a", 4.0, 5.0)]);
        assert_eq!(r.mae, 0.25);
        assert_eq!(r.obo, 1.0);
    }

    #[test]
    fn two_video_example() {
        let r = EvalReport::from_counts([("a", 10.0, 8.0), ("b", 5.0, 5.0)]);
        assert!((r.mae - 0.1).abs() < 1e-15);
        assert_eq!(r.obo, 0.5);
    }

    #[test]
    fn zero_true_count_is_flagged() {
        let r = EvalReport::from_counts([("z", 0.0, 0.4), ("a", 2.0, 3.0)]);
        assert_eq!(r.mae, 0.5);
        assert_eq!(r.obo, 1.0);
        assert_eq!(r.excluded().count(), 1);
        assert!(r.to_csv().contains("z,0,0.400000,0.400000,excluded,1"));
        assert!(r.summary().contains("z has true count 0"));
    }

    #[test]
    fn scale_awareness_and_obo_brackets() {
        let a = EvalReport::from_counts([("a", 6.0, 4.5)]);
        let b = EvalReport::from_counts([("a", 12.0, 9.0)]);
        assert_eq!(a.mae, b.mae);
        // |Δ| = 0.6 < 1: any nudge below 0.4 keeps the hit.
        for d in [-0.39, 0.0, 0.39] {
            assert_eq!(EvalReport::from_counts([("a", 5.0, 5.6 + d)]).obo, 1.0);
        }
        assert_eq!(EvalReport::from_counts([("a", 5.0, 6.0001)]).obo, 0.0);
    }
}
