//! Post-warmup draws and the per-transition sampler statistics.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::nuts::Transition;
use super::SamplerError;

/// Sampler statistics for the retained draws of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub log_density: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    pub divergent: Vec<bool>,
    /// Step size used after warmup.
    pub step_size: f64,
    /// Diagonal inverse metric used after warmup.
    pub inv_metric: Vec<f64>,
}

impl ChainStats {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            log_density: Vec::with_capacity(n),
            accept_stat: Vec::with_capacity(n),
            tree_depth: Vec::with_capacity(n),
            n_leapfrog: Vec::with_capacity(n),
            divergent: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    pub(crate) fn push(&mut self, t: &Transition, log_density: f64) {
        self.log_density.push(log_density);
        self.accept_stat.push(t.accept_stat);
        self.tree_depth.push(t.depth as u32);
        self.n_leapfrog.push(t.n_leapfrog as u32);
        self.divergent.push(t.divergent);
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn treedepth_hits(&self, max_treedepth: usize) -> usize {
        self.tree_depth.iter().filter(|&&d| d as usize >= max_treedepth).count()
    }
}

/// Draws from all chains, stored chain by chain in row-major
/// `samples x columns` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    names: Vec<String>,
    chains: Vec<Vec<f64>>,
    stats: Vec<ChainStats>,
    pinned: Vec<bool>,
    max_treedepth: usize,
}

const STAT_COLUMNS: [&str; 6] = ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__"];

impl PosteriorDraws {
    /// # Panics
    ///
    /// If the chain blocks are not all `samples * names.len()` long.
    pub fn new(
        names: Vec<String>,
        chains: Vec<Vec<f64>>,
        stats: Vec<ChainStats>,
        pinned: Vec<bool>,
        max_treedepth: usize,
    ) -> Self {
        let width = names.len();
        let len = chains.first().map_or(0, Vec::len);
        assert!(width > 0 && len % width == 0, "draw block is not a whole number of rows");
        assert!(chains.iter().all(|c| c.len() == len), "chains have different lengths");
        assert_eq!(chains.len(), stats.len());
        assert_eq!(pinned.len(), width);
        Self { names, chains, stats, pinned, max_treedepth }
    }

    /// Draws without sampler statistics, e.g. from an external source.
    pub fn from_values(names: Vec<String>, chains: Vec<Vec<f64>>) -> Self {
        let samples = chains.first().map_or(0, |c| c.len() / names.len().max(1));
        let stats = chains
            .iter()
            .map(|_| ChainStats {
                log_density: vec![f64::NAN; samples],
                accept_stat: vec![f64::NAN; samples],
                tree_depth: vec![0; samples],
                n_leapfrog: vec![0; samples],
                divergent: vec![false; samples],
                step_size: f64::NAN,
                inv_metric: Vec::new(),
            })
            .collect();
        let pinned = vec![false; names.len()];
        Self::new(names, chains, stats, pinned, 10)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_samples(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len() / self.names.len())
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn stats(&self) -> &[ChainStats] {
        &self.stats
    }

    pub fn max_treedepth(&self) -> usize {
        self.max_treedepth
    }

    pub fn draw(&self, chain: usize, sample: usize) -> &[f64] {
        let w = self.names.len();
        &self.chains[chain][sample * w..(sample + 1) * w]
    }

    /// Iterates over every draw, chain by chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(move |c| c.chunks_exact(self.names.len()))
    }

    pub fn chain_column(&self, chain: usize, column: usize) -> Vec<f64> {
        self.chains[chain].chunks_exact(self.names.len()).map(|row| row[column]).collect()
    }

    /// One column with all chains concatenated in chain order.
    pub fn pooled_column(&self, column: usize) -> Vec<f64> {
        self.iter_draws().map(|row| row[column]).collect()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().map(ChainStats::divergences).sum()
    }

    pub fn treedepth_hits(&self) -> usize {
        self.stats.iter().map(|s| s.treedepth_hits(self.max_treedepth)).sum()
    }

    /// Writes the draws as CSV: one row per draw with `chain` and
    /// `iteration` first, then sampler statistics (suffix `__`), then the
    /// parameters. Pinned parameters are listed in a leading
    /// `# pinned:` comment and `# max_treedepth:` records the cap.
    ///
    /// Floats use the shortest representation that parses back to the
    /// same value, so a round trip is lossless.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SamplerError> {
        let io = |e: std::io::Error| SamplerError::Io(e.to_string());
        let pinned: Vec<&str> =
            self.names.iter().zip(&self.pinned).filter(|(_, &p)| p).map(|(n, _)| n.as_str()).collect();
        writeln!(w, "# max_treedepth: {}", self.max_treedepth).map_err(io)?;
        if !pinned.is_empty() {
            writeln!(w, "# pinned: {}", pinned.join(" ")).map_err(io)?;
        }
        for (c, stats) in self.stats.iter().enumerate() {
            if !stats.inv_metric.is_empty() {
                let values: Vec<String> = stats.inv_metric.iter().map(|v| v.to_string()).collect();
                writeln!(w, "# inv_metric: {} {}", c + 1, values.join(" ")).map_err(io)?;
            }
        }
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(STAT_COLUMNS.iter().map(|s| s.to_string()));
        header.extend(self.names.iter().map(|n| csv_field(n)));
        writeln!(w, "{}", header.join(",")).map_err(io)?;

        let mut line = String::new();
        for (c, stats) in self.stats.iter().enumerate() {
            for s in 0..self.n_samples() {
                use std::fmt::Write as _;
                line.clear();
                let _ = write!(
                    line,
                    "{},{},{},{},{},{},{},{}",
                    c + 1,
                    s + 1,
                    stats.log_density[s],
                    stats.accept_stat[s],
                    stats.step_size,
                    stats.tree_depth[s],
                    stats.n_leapfrog[s],
                    u8::from(stats.divergent[s])
                );
                for v in self.draw(c, s) {
                    let _ = write!(line, ",{v}");
                }
                writeln!(w, "{line}").map_err(io)?;
            }
        }
        Ok(())
    }

    /// Reads the format written by [`PosteriorDraws::write_csv`]. Statistic
    /// columns are optional; any other column ending in `__` is ignored.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SamplerError> {
        let fmt = |line: usize, msg: String| SamplerError::Format(format!("line {line}: {msg}"));
        let mut pinned_names: Vec<String> = Vec::new();
        let mut max_treedepth = 10;
        let mut inv_metrics: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut chain_ids: Vec<usize> = Vec::new();

        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SamplerError::Io(e.to_string()))?;
            let line_no = i + 1;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(list) = comment.strip_prefix("pinned:") {
                    pinned_names.extend(list.split_whitespace().map(String::from));
                } else if let Some(v) = comment.strip_prefix("max_treedepth:") {
                    max_treedepth = v.trim().parse().map_err(|_| fmt(line_no, "bad max_treedepth".into()))?;
                } else if let Some(v) = comment.strip_prefix("inv_metric:") {
                    let nums = v
                        .split_whitespace()
                        .map(|x| x.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| fmt(line_no, "bad inv_metric".into()))?;
                    match nums.split_first() {
                        Some((chain, rest)) => inv_metrics.push((*chain as usize, rest.to_vec())),
                        None => return Err(fmt(line_no, "empty inv_metric".into())),
                    }
                }
                continue;
            }
            let fields = split_csv_line(line);
            match &header {
                None => header = Some(fields),
                Some(h) => {
                    if fields.len() != h.len() {
                        return Err(fmt(line_no, format!("{} fields, header has {}", fields.len(), h.len())));
                    }
                    let values = fields
                        .iter()
                        .map(|f| f.parse::<f64>().map_err(|_| fmt(line_no, format!("not a number: {f:?}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    let chain = values[0] as usize;
                    if !chain_ids.contains(&chain) {
                        chain_ids.push(chain);
                    }
                    rows.push((chain, values));
                }
            }
        }

        let header = header.ok_or_else(|| SamplerError::Format("missing header".into()))?;
        if header.len() < 3 || header[0] != "chain" || header[1] != "iteration" {
            return Err(SamplerError::Format("header must start with chain,iteration".into()));
        }
        let col = |name: &str| header.iter().position(|h| h == name);
        let param_cols: Vec<usize> = (2..header.len()).filter(|&i| !header[i].ends_with("__")).collect();
        if param_cols.is_empty() {
            return Err(SamplerError::Format("no parameter columns".into()));
        }
        let names: Vec<String> = param_cols.iter().map(|&i| header[i].clone()).collect();
        if let Some(p) = pinned_names.iter().find(|p| !names.contains(p)) {
            return Err(SamplerError::Format(format!("pinned column {p} not in header")));
        }
        let pinned = names.iter().map(|n| pinned_names.contains(n)).collect();

        chain_ids.sort_unstable();
        let mut chains = Vec::with_capacity(chain_ids.len());
        let mut stats = Vec::with_capacity(chain_ids.len());
        let stat_col = STAT_COLUMNS.map(col);
        for &id in &chain_ids {
            let mut block = Vec::new();
            let mut st = ChainStats::default();
            for (_, values) in rows.iter().filter(|(c, _)| *c == id) {
                block.extend(param_cols.iter().map(|&i| values[i]));
                let get = |k: usize| stat_col[k].map_or(f64::NAN, |i| values[i]);
                st.log_density.push(get(0));
                st.accept_stat.push(get(1));
                st.step_size = get(2);
                st.tree_depth.push(stat_col[3].map_or(0, |i| values[i] as u32));
                st.n_leapfrog.push(stat_col[4].map_or(0, |i| values[i] as u32));
                st.divergent.push(stat_col[5].is_some_and(|i| values[i] != 0.0));
            }
            if let Some((_, m)) = inv_metrics.iter().find(|(c, _)| *c == id) {
                st.inv_metric = m.clone();
            }
            chains.push(block);
            stats.push(st);
        }
        if chains.is_empty() {
            return Err(SamplerError::Format("no draws".into()));
        }
        if chains.iter().any(|c| c.len() != chains[0].len()) {
            return Err(SamplerError::Format("chains have different numbers of draws".into()));
        }
        Ok(Self::new(names, chains, stats, pinned, max_treedepth))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
    match rdr.records().next() {
        Some(Ok(rec)) => rec.iter().map(|s| s.trim().to_string()).collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample, tests::DiagGaussian, SamplerConfig};
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let target = DiagGaussian { mean: vec![0.0, 3.0], sd: vec![1.0, 0.1] };
        let config = SamplerConfig { seed: 1, chains: 2, warmup: 150, samples: 20, ..Default::default() };
        let draws = sample(&target, &config).unwrap();
        let mut buf = Vec::new();
        draws.write_csv(&mut buf).unwrap();
        let back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, draws);

        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn pinned_columns_survive() {
        let names = vec!["h".to_string(), "sigma_y".to_string()];
        let mut draws = PosteriorDraws::from_values(names, vec![vec![0.1, 1.9, 0.2, 1.9]]);
        draws.pinned = vec![false, true];
        let mut buf = Vec::new();
        draws.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("# pinned: sigma_y"));
        let back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.pinned(), &[false, true]);
        assert_eq!(back.pooled_column(1), vec![1.9, 1.9]);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = "chain,iteration,h\n1,1,0.5\n1,2,abc\n";
        match PosteriorDraws::read_csv(text.as_bytes()) {
            Err(SamplerError::Format(msg)) => assert!(msg.starts_with("line 3"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(PosteriorDraws::read_csv("h,x\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn float_formatting_round_trips(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..20)) {
            let draws = PosteriorDraws::from_values(vec!["x".into()], vec![v.clone()]);
            let mut buf = Vec::new();
            draws.write_csv(&mut buf).unwrap();
            let back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.pooled_column(0), v);
        }
    }
}
