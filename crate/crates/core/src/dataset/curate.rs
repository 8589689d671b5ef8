use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, Sample, Video};

/// Rule for turning the first/last action timestamps into observation windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurationMode {
    /// Start `[t_first, t_first + 3]`, goal `[t_last - 2, t_last + 1]`.
    Pdpp,
    /// Start `[t_first - 1, t_first + 2]`, goal `[t_last - 1, t_last + 2]`.
    Kepp,
}

/// A time interval in seconds, `[start, end)` over one-second frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl CurationMode {
    /// Start and goal windows for actions starting at `t_first` and `t_last`.
    pub fn windows(self, t_first: f64, t_last: f64) -> (Window, Window) {
        match self {
            CurationMode::Pdpp => (
                Window {
                    start: t_first,
                    end: t_first + 3.0,
                },
                Window {
                    start: t_last - 2.0,
                    end: t_last + 1.0,
                },
            ),
            CurationMode::Kepp => (
                Window {
                    start: t_first - 1.0,
                    end: t_first + 2.0,
                },
                Window {
                    start: t_last - 1.0,
                    end: t_last + 2.0,
                },
            ),
        }
    }
}

impl fmt::Display for CurationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurationMode::Pdpp => "pdpp",
            CurationMode::Kepp => "kepp",
        })
    }
}

impl FromStr for CurationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pdpp" => Ok(CurationMode::Pdpp),
            "kepp" => Ok(CurationMode::Kepp),
            other => Err(format!("unknown curation mode `{other}` (expected pdpp or kepp)")),
        }
    }
}

/// Mean of the frames whose second lies in the window, after clamping to the video.
fn window_mean(video: &Video, w: Window) -> Result<Vec<f64>, DatasetError> {
    let duration = video.duration();
    let lo = w.start.max(0.0).floor() as usize;
    let hi = (w.end.min(duration as f64).ceil().max(0.0)) as usize;
    if lo >= hi {
        return Err(DatasetError::EmptyWindow {
            start: w.start,
            end: w.end,
            duration,
        });
    }
    let dim = video.frames[0].len();
    let mut acc = vec![0.0; dim];
    for t in lo..hi {
        for (a, v) in acc.iter_mut().zip(video.frame(t)) {
            *a += v;
        }
    }
    let n = (hi - lo) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Start and goal observations for the steps `first_step..=last_step`.
pub fn curate_windows(
    video: &Video,
    first_step: usize,
    last_step: usize,
    mode: CurationMode,
) -> Result<(Vec<f64>, Vec<f64>), DatasetError> {
    let (Some(first), Some(last)) = (video.steps.get(first_step), video.steps.get(last_step)) else {
        return Err(DatasetError::Invalid(format!(
            "steps {first_step}..={last_step} out of range for a video with {} steps",
            video.steps.len()
        )));
    };
    if video.frames.is_empty() {
        return Err(DatasetError::Invalid("video has no frames".into()));
    }
    let (ws, wg) = mode.windows(first.start, last.start);
    Ok((window_mean(video, ws)?, window_mean(video, wg)?))
}

/// Every contiguous horizon-`T` window of a video's steps, as samples.
pub fn slide_horizon(
    corpus: &Corpus,
    video: &Video,
    horizon: usize,
    mode: CurationMode,
) -> Result<Vec<Sample>, DatasetError> {
    if horizon < 2 {
        return Err(DatasetError::Invalid(format!("horizon must be >= 2, got {horizon}")));
    }
    if video.steps.len() < horizon {
        return Ok(Vec::new());
    }
    (0..=video.steps.len() - horizon)
        .map(|k| {
            let last = k + horizon - 1;
            let (obs_start, obs_goal) = curate_windows(video, k, last, mode)?;
            let actions: Vec<usize> = video.steps[k..=last].iter().map(|s| s.action).collect();
            Ok(Sample {
                task: video.task,
                text_start: corpus.language_table[actions[0]].clone(),
                text_goal: corpus.language_table[actions[horizon - 1]].clone(),
                actions,
                obs_start,
                obs_goal,
            })
        })
        .collect()
}

/// [`slide_horizon`] over every video, in corpus order.
pub fn curate_corpus(corpus: &Corpus, horizon: usize, mode: CurationMode) -> Result<super::SampleSet, DatasetError> {
    let mut samples = Vec::new();
    for v in &corpus.videos {
        samples.extend(slide_horizon(corpus, v, horizon, mode)?);
    }
    Ok(super::SampleSet {
        num_tasks: corpus.num_tasks(),
        num_actions: corpus.num_actions(),
        obs_dim: corpus.config.obs_dim,
        text_dim: corpus.config.text_dim,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusConfig, Step};

    /// One-dim video: frame t holds the value t, so a window mean is the mean of its seconds.
    fn ramp_video(duration: usize, steps: Vec<Step>) -> Video {
        Video {
            task: 0,
            steps,
            frames: (0..duration).map(|t| vec![t as f64]).collect(),
        }
    }

    fn step(action: usize, start: f64, end: f64) -> Step {
        Step { action, start, end }
    }

    #[test]
    fn window_boundaries() {
        let (s, g) = CurationMode::Pdpp.windows(10.0, 50.0);
        assert_eq!((s.start, s.end), (10.0, 13.0));
        assert_eq!((g.start, g.end), (48.0, 51.0));
        let (s, g) = CurationMode::Kepp.windows(10.0, 50.0);
        assert_eq!((s.start, s.end), (9.0, 12.0));
        assert_eq!((g.start, g.end), (49.0, 52.0));
    }

    #[test]
    fn window_means_use_the_right_seconds() {
        let v = ramp_video(60, vec![step(0, 10.0, 20.0), step(1, 50.0, 55.0)]);
        let (os, og) = curate_windows(&v, 0, 1, CurationMode::Pdpp).unwrap();
        assert_eq!(os, vec![11.0]); // mean of 10, 11, 12
        assert_eq!(og, vec![49.0]); // mean of 48, 49, 50
        let (os, og) = curate_windows(&v, 0, 1, CurationMode::Kepp).unwrap();
        assert_eq!(os, vec![10.0]);
        assert_eq!(og, vec![50.0]);
        assert_ne!(
            curate_windows(&v, 0, 1, CurationMode::Pdpp).unwrap(),
            curate_windows(&v, 0, 1, CurationMode::Kepp).unwrap()
        );
    }

    #[test]
    fn windows_clamp_to_video_bounds() {
        let v = ramp_video(5, vec![step(0, 0.0, 3.0), step(1, 4.0, 5.0)]);
        let (os, og) = curate_windows(&v, 0, 1, CurationMode::Kepp).unwrap();
        assert_eq!(os, vec![0.5]); // [-1, 2) -> seconds 0, 1
        assert_eq!(og, vec![3.5]); // [3, 6) -> 3, 4
        let short = ramp_video(2, vec![step(0, 5.0, 6.0)]);
        assert!(matches!(
            curate_windows(&short, 0, 0, CurationMode::Pdpp),
            Err(DatasetError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn single_action_window_returns_its_row_when_noise_free() {
        let cfg = CorpusConfig {
            noise_sd: 0.0,
            videos_per_task: 2,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        for v in &c.videos {
            // steps last >= 4 s, so the PDPP start window sits inside the first step
            let (os, _) = curate_windows(v, 0, 1, CurationMode::Pdpp).unwrap();
            for (a, b) in os.iter().zip(&c.action_table[v.steps[0].action]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sliding_counts_and_contents() {
        let cfg = CorpusConfig {
            videos_per_task: 2,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mut v = c.videos[0].clone();
        v.steps.truncate(5);
        let samples = slide_horizon(&c, &v, 3, CurationMode::Pdpp).unwrap();
        assert_eq!(samples.len(), 3);
        for (k, s) in samples.iter().enumerate() {
            let expected: Vec<usize> = v.steps[k..k + 3].iter().map(|s| s.action).collect();
            assert_eq!(s.actions, expected);
            assert_eq!(s.text_start, c.language_table[expected[0]]);
            assert_eq!(s.text_goal, c.language_table[expected[2]]);
        }
        v.steps.truncate(2);
        assert!(slide_horizon(&c, &v, 3, CurationMode::Pdpp).unwrap().is_empty());

        let total = curate_corpus(&c, 4, CurationMode::Kepp).unwrap().len();
        let expected: usize = c.videos.iter().map(|v| (v.steps.len() + 1).saturating_sub(4)).sum();
        assert_eq!(total, expected);
    }
}
