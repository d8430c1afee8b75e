use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open snippet ranges covering a video of `len` snippets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_size: usize,
    pub stride: usize,
    pub windows: Vec<(usize, usize)>,
}

/// Windows start at `0, s, 2s, …` while a full window fits; if snippets
/// remain, one final full-size window ends at `len`. Videos no longer than
/// `w` get a single window `[0, len)`.
///
/// ```
/// use owl_tal::proposals::plan_windows;
/// let plan = plan_windows(512, 256, 128).unwrap();
/// assert_eq!(plan.windows, vec![(0, 256), (128, 384), (256, 512)]);
/// ```
pub fn plan_windows(len: usize, window_size: usize, stride: usize) -> Result<WindowPlan> {
    if window_size == 0 || stride == 0 || stride > window_size {
        return Err(Error::Config(format!(
            "window plan needs 1 <= stride <= window, got window {window_size}, stride {stride}"
        )));
    }
    if len == 0 {
        return Err(Error::Data("cannot plan windows over zero snippets".into()));
    }
    let mut windows = Vec::new();
    if len <= window_size {
        windows.push((0, len));
    } else {
        let mut start = 0;
        while start + window_size <= len {
            windows.push((start, start + window_size));
            start += stride;
        }
        let last_end = windows.last().map_or(0, |w| w.1);
        if last_end < len {
            windows.push((len - window_size, len));
        }
    }
    Ok(WindowPlan {
        window_size,
        stride,
        windows,
    })
}

impl WindowPlan {
    /// Index of a window fully containing snippet range `[a, b]`, if any.
    pub fn containing(&self, a: usize, b: usize) -> Option<usize> {
        self.windows.iter().position(|&(s, e)| s <= a && b < e)
    }
}
