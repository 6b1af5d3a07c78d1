use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ReasoningError;
use crate::perception::PoolObservation;

/// Prompt texts. The defaults are compiled in; a directory holding
/// `base_prompt.txt`, `guideline.txt` and `system.txt` overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub base: String,
    pub guideline: String,
    pub system: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            base: include_str!("../../templates/base_prompt.txt").trim().to_string(),
            guideline: include_str!("../../templates/guideline.txt").trim().to_string(),
            system: include_str!("../../templates/system.txt").trim().to_string(),
        }
    }
}

impl Templates {
    pub fn load(dir: &Path) -> Result<Self, ReasoningError> {
        let read = |name: &str| -> Result<String, ReasoningError> {
            std::fs::read_to_string(dir.join(name)).map(|s| s.trim().to_string()).map_err(|e| {
                ReasoningError::Templates { path: dir.join(name).display().to_string(), detail: e.to_string() }
            })
        };
        Ok(Self { base: read("base_prompt.txt")?, guideline: read("guideline.txt")?, system: read("system.txt")? })
    }
}

/// Per-pool facts stated in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFacts {
    pub label: String,
    pub area: usize,
    /// 1 for the largest pool.
    pub size_rank: usize,
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
}

impl PoolFacts {
    pub fn line(&self, total: usize) -> String {
        let yn = |b: bool| if b { "yes" } else { "no" };
        format!(
            "{}: size rank {} of {} ({} cells); active bleeding: {}; blood clot: {}; surgical tool adjacent: {}",
            self.label,
            self.size_rank,
            total,
            self.area,
            yn(self.bleeding),
            yn(self.clot),
            yn(self.tool_adjacent)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub base: String,
    pub context: Option<String>,
    pub pools: Vec<PoolFacts>,
    /// Annotated scene PNG.
    #[serde(skip)]
    pub image: Option<Arc<Vec<u8>>>,
}

impl PromptBundle {
    pub fn known_labels(&self) -> Vec<String> {
        self.pools.iter().map(|p| p.label.clone()).collect()
    }

    pub fn pool_lines(&self) -> Vec<String> {
        self.pools.iter().map(|p| p.line(self.pools.len())).collect()
    }

    /// Full user message: base text, pool facts, then the context verbatim.
    pub fn user_text(&self) -> String {
        let mut s = self.base.clone();
        s.push_str("\n\nDetected pools:\n");
        for line in self.pool_lines() {
            s.push_str("- ");
            s.push_str(&line);
            s.push('\n');
        }
        if let Some(ctx) = &self.context {
            s.push_str("\nContext from the surgical team: ");
            s.push_str(ctx);
            s.push('\n');
        }
        s
    }
}

/// Bundles base text, pool facts (in label order) and optional context.
pub fn build_prompt(
    pools: &[PoolObservation],
    context: Option<&str>,
    templates: &Templates,
    image: Option<Arc<Vec<u8>>>,
) -> Result<PromptBundle, ReasoningError> {
    if pools.is_empty() {
        return Err(ReasoningError::NoPools);
    }
    let mut by_size: Vec<&PoolObservation> = pools.iter().collect();
    by_size.sort_by(|a, b| b.area.cmp(&a.area).then(a.label_number().cmp(&b.label_number())));
    let mut facts: Vec<PoolFacts> = pools
        .iter()
        .map(|p| PoolFacts {
            label: p.label.clone(),
            area: p.area,
            size_rank: by_size.iter().position(|q| q.label == p.label).map_or(0, |i| i + 1),
            bleeding: p.bleeding,
            clot: p.clot,
            tool_adjacent: p.tool_adjacent,
        })
        .collect();
    facts.sort_by_key(|f| crate::perception::label_number(&f.label));
    Ok(PromptBundle { base: templates.base.clone(), context: context.map(str::to_string), pools: facts, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{BinaryMask, PoolFlags};
    use crate::tissue::Extent;

    fn pools(spec: &[(&str, usize, bool, bool)]) -> Vec<PoolObservation> {
        let grid = BinaryMask::unchecked(32, 32, Extent::default());
        let mut next = 0u32;
        spec.iter()
            .map(|(label, area, bleeding, clot)| {
                let cells: Vec<u32> = (next..next + *area as u32).collect();
                next += *area as u32;
                PoolObservation::from_cells(
                    label.to_string(),
                    cells,
                    &grid,
                    PoolFlags { bleeding: *bleeding, clot: *clot, tool_adjacent: false },
                )
            })
            .collect()
    }

    #[test]
    fn four_lines_no_context() {
        let p = pools(&[
            ("P1", 30, false, false),
            ("P2", 12, true, false),
            ("P3", 20, false, false),
            ("P4", 5, false, true),
        ]);
        let b = build_prompt(&p, None, &Templates::default(), None).unwrap();
        assert_eq!(b.pool_lines().len(), 4);
        assert!(b.context.is_none());
        assert!(b.user_text().starts_with(&Templates::default().base));
        assert!(b.pool_lines()[1].contains("active bleeding: yes"));
        assert!(b.pool_lines()[0].contains("size rank 1 of 4"));
    }

    #[test]
    fn guideline_appended_verbatim() {
        let t = Templates::default();
        let p = pools(&[("P1", 30, false, false)]);
        let b = build_prompt(&p, Some(&t.guideline), &t, None).unwrap();
        assert!(b.user_text().contains(&t.guideline));
        assert_eq!(b.context.as_deref(), Some(t.guideline.as_str()));
    }

    #[test]
    fn empty_pools_rejected() {
        assert_eq!(build_prompt(&[], None, &Templates::default(), None), Err(ReasoningError::NoPools));
    }

    #[test]
    fn template_dir_loads() {
        let dir = tempfile::tempdir().unwrap();
        for (f, t) in [("base_prompt.txt", "base"), ("guideline.txt", "guide"), ("system.txt", "sys")] {
            std::fs::write(dir.path().join(f), t).unwrap();
        }
        let t = Templates::load(dir.path()).unwrap();
        assert_eq!((t.base.as_str(), t.guideline.as_str(), t.system.as_str()), ("base", "guide", "sys"));
        std::fs::remove_file(dir.path().join("system.txt")).unwrap();
        assert!(Templates::load(dir.path()).is_err());
    }
}
