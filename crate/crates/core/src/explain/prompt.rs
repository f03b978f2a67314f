use crate::context::ContextVector;
use crate::error::{Error, Result};

/// The prompt scaffold with its three slots.
pub const PROMPT_TEMPLATE: &str = "You are a node in a medical graph.\n\
Your topological context is: <context_vector>\n\
Your predicted label: <predicted_label>. True label: <true_label>\n\
Explain in natural language why you predicted <predicted_label>. \
If incorrect, describe what might have misled you based on your structure, features, and neighbors.";

const TRUE_CLAUSE: &str = " True label: <true_label>";

/// `{"degree": 4, "clustering coefficient": 0.000, ...}`
pub fn render_context(ctx: &ContextVector) -> String {
    let body: Vec<String> = ctx
        .key_values()
        .into_iter()
        .map(|(k, v)| format!("\"{k}\": {v}"))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Fills the scaffold. The true-label clause is dropped when `true_label` is `None`.
pub fn build_prompt(ctx: &ContextVector, pred_label: &str, true_label: Option<&str>) -> Result<String> {
    if pred_label.trim().is_empty() {
        return Err(Error::Config("a predicted label is required to build a prompt".into()));
    }
    let template = match true_label {
        Some(t) => PROMPT_TEMPLATE.replace("<true_label>", t),
        None => PROMPT_TEMPLATE.replace(TRUE_CLAUSE, ""),
    };
    Ok(template
        .replace("<context_vector>", &render_context(ctx))
        .replace("<predicted_label>", pred_label))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn node3() -> ContextVector {
        ContextVector {
            degree: 4,
            clustering: 0.0,
            two_hop_agreement: 0.25,
            eigencentrality: 0.1,
            betweenness: 0.02,
            avg_edge_weight: 0.929,
            community: 2,
            top_feature: Some((117, 10.0)),
        }
    }

    #[test]
    fn slots_are_filled() {
        let p = build_prompt(&node3(), "femur-left", Some("kidney-right")).unwrap();
        assert!(!p.contains('<') && !p.contains('>'));
        assert!(p.contains("Your predicted label: femur-left. True label: kidney-right\n"));
        assert!(p.contains("\"degree\": 4, \"clustering coefficient\": 0.000"));
        assert!(p.contains("\"average edge weight\": 0.929"));
        assert!(p.contains("\"top feature\": F[117]=10.000}"));
        assert!(p.starts_with("You are a node in a medical graph.\nYour topological context is: {"));
    }

    #[test]
    fn absent_truth_drops_clause() {
        let p = build_prompt(&node3(), "femur-left", None).unwrap();
        assert!(!p.contains("True label"));
        assert!(p.contains("Your predicted label: femur-left.\nExplain"));
        assert_eq!(p, build_prompt(&node3(), "femur-left", None).unwrap());
        assert!(build_prompt(&node3(), " ", None).is_err());
    }
}
