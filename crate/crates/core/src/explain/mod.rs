//! Natural-language explanations for individual predictions.
//!
//! A node's context vector and prediction are rendered into a fixed prompt,
//! passed to a [`Provider`], and stored as an [`ExplanationRecord`]. The
//! default [`OfflineProvider`] needs no network access.

mod prompt;
mod provider;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use prompt::{build_prompt, render_context, PROMPT_TEMPLATE};
pub use provider::{
    generate_explanation, Adapter, ExplainRequest, OfflineProvider, Provider, ProviderConfig, ProviderKind,
    RemoteProvider, OFFLINE_ID,
};

use crate::context::ContextVector;
use crate::error::{Error, Result};

/// Label index to human-readable class name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassNames(Vec<String>);

impl ClassNames {
    pub fn new(names: Vec<String>) -> Self {
        Self(names)
    }

    /// `class_0`, `class_1`, ...
    pub fn numbered(k: usize) -> Self {
        Self((0..k).map(|i| format!("class_{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn name(&self, label: usize) -> String {
        self.0.get(label).cloned().unwrap_or_else(|| format!("class_{label}"))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    /// CSV with header `index,name`; indices must run `0..K` in order.
    pub fn parse_csv(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "index,name" => {}
            _ => return Err(Error::parse(path, 1, "expected header `index,name`")),
        }
        let mut names = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (i, name) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `index,name`"))?;
            let i: usize = i.trim().parse().map_err(|_| Error::parse(path, idx + 1, "bad index"))?;
            if i != names.len() {
                return Err(Error::parse(path, idx + 1, format!("expected index {}", names.len())));
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::parse(path, idx + 1, "empty class name"));
            }
            names.push(name.to_string());
        }
        Ok(Self(names))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?, Some(path))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,name\n");
        for (i, n) in self.0.iter().enumerate() {
            s.push_str(&format!("{i},{n}\n"));
        }
        s
    }
}

/// One line of the explanations file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub node: usize,
    /// The rendered key-value context.
    pub context: String,
    pub pred: String,
    #[serde(rename = "true", default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    pub prompt: String,
    pub text: String,
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Input for one node of a batch.
#[derive(Clone, Debug)]
pub struct ExplainItem {
    pub node: usize,
    pub context: ContextVector,
    pub pred: usize,
    pub truth: Option<usize>,
}

/// Explains every item with at most `concurrency` requests in flight.
/// Records come back sorted by node id; the first failure (in node order) is returned.
pub fn explain_nodes(
    items: &[ExplainItem],
    names: &ClassNames,
    provider: &dyn Provider,
    concurrency: usize,
) -> Result<Vec<ExplanationRecord>> {
    let one = |item: &ExplainItem| -> Result<ExplanationRecord> {
        let pred = names.name(item.pred);
        let truth = item.truth.map(|t| names.name(t));
        let prompt = build_prompt(&item.context, &pred, truth.as_deref())?;
        let text = provider.generate(&ExplainRequest {
            prompt: &prompt,
            context: &item.context,
            pred: &pred,
            truth: truth.as_deref(),
        })?;
        if text.trim().is_empty() {
            return Err(Error::ProviderEmpty(provider.id()));
        }
        Ok(ExplanationRecord {
            node: item.node,
            context: render_context(&item.context),
            pred,
            truth,
            prompt,
            text,
            provider: provider.id(),
            model: provider.model().map(str::to_string),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    };

    let mut results: Vec<Option<Result<ExplanationRecord>>> = Vec::new();
    if concurrency <= 1 || items.len() <= 1 {
        results.extend(items.iter().map(|it| Some(one(it))));
    } else {
        let slots = Mutex::new((0..items.len()).map(|_| None).collect::<Vec<_>>());
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..concurrency.min(items.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    let r = one(item);
                    slots.lock().expect("worker panicked")[i] = Some(r);
                });
            }
        });
        results = slots.into_inner().expect("worker panicked");
    }
    let mut records = results
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.node);
    Ok(records)
}

pub fn write_explanations(records: &[ExplanationRecord], out: &mut impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn persist_explanations(records: &[ExplanationRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_explanations(records, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn parse_explanations(text: &str, path: Option<&Path>) -> Result<Vec<ExplanationRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

pub fn load_explanations(path: &Path) -> Result<Vec<ExplanationRecord>> {
    parse_explanations(&fs::read_to_string(path)?, Some(path))
}
