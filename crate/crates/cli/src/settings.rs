//! Settings resolution: flags over config file over defaults.

use std::fmt::Debug;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use specplan_core::simkit::{GridBase, ImpatienceModel, Study};
use specplan_core::Micros;

use crate::{usage, GridArgs, SimulateArgs, WorldFlags};

/// Comma-separated flag value. An empty string is an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

pub fn seconds(s: &str) -> Result<Micros, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{s:?} is not a nonnegative number of seconds"));
    }
    Ok(Micros::from_secs_f64(v))
}

/// Reads a JSON or YAML file into `T`. Unreadable or malformed files are
/// usage errors.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_yaml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        Some(p) => load_file(p).with_context(|| "loading settings"),
        None => Ok(T::default()),
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })+
    };
}

/// Plan shape keys shared by `simulate` and `grid`, named like their flags.
macro_rules! world_fields {
    ($name:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub n: usize,
            pub ta: Micros,
            pub tt: Micros,
            pub tok_a: u64,
            pub tok_t: u64,
            pub exec: Micros,
            pub seed: u64,
            $(pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                let b = GridBase::default();
                $name {
                    n: b.n,
                    ta: b.time_a,
                    tt: b.time_t,
                    tok_a: b.tok_a,
                    tok_t: b.tok_t,
                    exec: b.exec,
                    seed: b.seed,
                    $($field: $default,)*
                }
            }
        }

        impl $name {
            pub fn base(&self) -> GridBase {
                GridBase {
                    n: self.n,
                    time_a: self.ta,
                    time_t: self.tt,
                    tok_a: self.tok_a,
                    tok_t: self.tok_t,
                    exec: self.exec,
                    seed: self.seed,
                }
            }

            fn overlay_world(&mut self, w: &WorldFlags) {
                overlay!(self, w; n, ta, tt, tok_a, tok_t, exec, seed);
            }

            fn validate_world(&self) -> anyhow::Result<()> {
                if self.n == 0 {
                    return Err(usage("n must be at least 1"));
                }
                if self.ta == Micros::ZERO || self.tt == Micros::ZERO {
                    return Err(usage("step latencies must be positive"));
                }
                if self.tok_a == 0 || self.tok_t == 0 {
                    return Err(usage("token counts must be positive"));
                }
                Ok(())
            }
        }
    };
}

world_fields!(SimulateSettings {
    acc: f64 = 1.0,
    k: usize = 4,
    interrupts: usize = 0,
    wait_low: Micros = ImpatienceModel::default().wait_low,
    wait_high: Micros = ImpatienceModel::default().wait_high,
});

world_fields!(GridSettings {
    study: Study = Study::AccuracyK,
    accuracies: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect(),
    ks: Vec<usize> = (1..=10).collect(),
    speeds: Vec<Micros> = (1..=8).map(Micros::from_secs).collect(),
    seeds: usize = 10,
    // 5 for speed, n for interruption when unset
    k: Option<usize> = None,
    acc: f64 = 0.5,
    counts: Vec<usize> = (0..=10).collect(),
    sims: usize = 5,
    wait_low: Micros = ImpatienceModel::default().wait_low,
    wait_high: Micros = ImpatienceModel::default().wait_high,
});

impl SimulateSettings {
    pub fn resolve(args: &SimulateArgs) -> anyhow::Result<Self> {
        let mut s: SimulateSettings = load_or_default(args.output.config.as_deref())?;
        s.overlay_world(&args.world);
        overlay!(s, args; acc, k, interrupts, wait_low, wait_high);
        s.validate()?;
        Ok(s)
    }

    pub fn impatience(&self) -> ImpatienceModel {
        ImpatienceModel {
            max_interrupts: self.interrupts,
            wait_low: self.wait_low,
            wait_high: self.wait_high,
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.validate_world()?;
        check_accuracy("acc", self.acc)?;
        if self.k == 0 {
            return Err(usage("k must be at least 1"));
        }
        if self.interrupts > 0 {
            self.impatience()
                .validate(self.tt)
                .map_err(|e| usage(format!("impatient user: {e}")))?;
        }
        Ok(())
    }
}

impl GridSettings {
    pub fn resolve(args: &GridArgs) -> anyhow::Result<Self> {
        let mut s: GridSettings = load_or_default(args.output.config.as_deref())?;
        s.overlay_world(&args.world);
        if let Some(study) = args.study {
            s.study = study.into();
        }
        if let Some(List(v)) = &args.accuracies {
            s.accuracies = v.clone();
        }
        if let Some(List(v)) = &args.ks {
            s.ks = v.clone();
        }
        if let Some(List(v)) = &args.speeds {
            s.speeds = v
                .iter()
                .map(|&x| seconds(&x.to_string()).map_err(usage))
                .collect::<anyhow::Result<_>>()?;
        }
        if let Some(List(v)) = &args.counts {
            s.counts = v.clone();
        }
        if args.k.is_some() {
            s.k = args.k;
        }
        overlay!(s, args; seeds, acc, sims, wait_low, wait_high);
        s.validate()?;
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(match self.study {
            Study::Interruption => self.n,
            _ => 5,
        })
    }

    pub fn impatience(&self) -> ImpatienceModel {
        ImpatienceModel {
            max_interrupts: 0,
            wait_low: self.wait_low,
            wait_high: self.wait_high,
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.validate_world()?;
        for &a in &self.accuracies {
            check_accuracy("accuracies", a)?;
        }
        check_accuracy("acc", self.acc)?;
        if self.ks.contains(&0) || self.k() == 0 {
            return Err(usage("k must be at least 1"));
        }
        if self.speeds.contains(&Micros::ZERO) {
            return Err(usage("speeds must be positive"));
        }
        if self.study == Study::Interruption {
            self.impatience()
                .validate(self.tt)
                .map_err(|e| usage(format!("impatient user: {e}")))?;
        }
        Ok(())
    }
}

fn check_accuracy(name: &str, a: f64) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(usage(format!("{name}: accuracy {a} is outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parse_and_may_be_empty() {
        assert_eq!("0, 0.5,1".parse::<List<f64>>().unwrap(), List(vec![0.0, 0.5, 1.0]));
        assert_eq!("".parse::<List<usize>>().unwrap(), List(vec![]));
        assert!("1,x".parse::<List<usize>>().is_err());
    }

    #[test]
    fn seconds_reject_negative() {
        assert_eq!(seconds("2.5"), Ok(Micros(2_500_000)));
        assert!(seconds("-1").is_err());
        assert!(seconds("nan").is_err());
    }

    #[test]
    fn file_keys_match_flag_names() {
        let s: SimulateSettings = serde_yaml::from_str("n: 3\ntt: 4\nk: 2\n").unwrap();
        assert_eq!((s.n, s.tt, s.k), (3, Micros::from_secs(4), 2));
        assert_eq!(s.ta, Micros::from_secs(2));
        assert!(serde_yaml::from_str::<SimulateSettings>("nn: 3\n").is_err());
    }
}
