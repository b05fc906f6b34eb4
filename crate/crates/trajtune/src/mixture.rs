//! Deterministic training-mixture composition.
//!
//! The mixture combines five channels: capability-weighted agent chat data,
//! a ReAct-format remix, fixed-count format-instruction pairs, negative
//! samples, and general chat data balanced against everything agent-flavored.
//! All counts follow largest-remainder apportionment (every channel lands
//! within one sample of its exact proportional target), all ordering comes
//! from seeded permutations, and the manifest records enough to reproduce
//! the output byte for byte.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capability::CapabilityTag;
use crate::chat::ChatConversation;
use crate::seed::derive_seed;
use crate::tokenizer::ApproxTokenCounter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSpec {
    /// Sample-level weights over the decomposed agent-capability buckets.
    /// Instruction following is absent by design: it enters as the
    /// fixed-count `instruction_pairs` channel instead.
    pub capability_weights: BTreeMap<CapabilityTag, f64>,
    /// Explicit size of the capability channel. Default: the largest total
    /// the available buckets can serve at the given weights.
    pub capability_total: Option<usize>,
    /// Fraction of agent-trajectory data kept in ReAct format. At 1.0 the
    /// aligned-chat capability channel empties and every trajectory stays
    /// ReAct-formatted.
    pub react_fraction: f64,
    /// general : agent sample ratio.
    pub general_agent_ratio: f64,
    /// Number of format-instruction pairs to include.
    pub instruction_pairs: usize,
    /// Final corpus slice, supporting partial-data ablations.
    pub data_fraction: f64,
    /// Repeat samples when a channel runs short instead of failing.
    pub oversample: bool,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(CapabilityTag::Reasoning, 1.0);
        weights.insert(CapabilityTag::Retrieval, 0.25);
        weights.insert(CapabilityTag::Understanding, 0.75);
        Self {
            capability_weights: weights,
            capability_total: None,
            react_fraction: 0.10,
            general_agent_ratio: 1.0,
            instruction_pairs: 2000,
            data_fraction: 1.0,
            oversample: false,
            seed: 0,
        }
    }
}

impl MixSpec {
    /// Checks every range constraint; violations name the offending key.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        for (tag, w) in &self.capability_weights {
            if !w.is_finite() || *w < 0.0 {
                violations.push(format!(
                    "capability_weights.{tag}: must be a non-negative finite number, got {w}"
                ));
            }
        }
        if self
            .capability_weights
            .contains_key(&CapabilityTag::InstructionFollowing)
        {
            violations.push(
                "capability_weights.instruction_following: instruction following is sized by \
                 instruction_pairs, not by weight"
                    .to_string(),
            );
        }
        if !self.capability_weights.values().any(|w| *w > 0.0) {
            violations.push("capability_weights: at least one weight must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.react_fraction) {
            violations.push(format!(
                "react_fraction: must lie in [0, 1], got {}",
                self.react_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.data_fraction) {
            violations.push(format!(
                "data_fraction: must lie in [0, 1], got {}",
                self.data_fraction
            ));
        }
        if !self.general_agent_ratio.is_finite() || self.general_agent_ratio < 0.0 {
            violations.push(format!(
                "general_agent_ratio: must be a non-negative finite number, got {}",
                self.general_agent_ratio
            ));
        }
        violations
    }

    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Largest-remainder apportionment of `total` over `weights`. Every count
/// stays within one of its exact share `total * w / sum(w)`; counts sum to
/// `total` exactly. Remainder ties break on lower index, so the result is
/// stable.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Uniform nested slice: a seeded permutation prefix of size
/// `round(fraction * N)`. Slices of the same corpus under the same seed
/// form an inclusion chain, so the 25% slice is a subset of the 50% slice.
pub fn slice_fraction<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = ((items.len() as f64) * fraction)
        .round()
        .min(items.len() as f64) as usize;
    order
        .into_iter()
        .take(take)
        .map(|i| items[i].clone())
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum MixError {
    #[error("invalid mix spec:\n  {}", .0.join("\n  "))]
    InvalidSpec(Vec<String>),
    #[error(
        "channel {channel}: {requested} samples requested but only {available} available \
         (enable oversampling to repeat samples)"
    )]
    SourceExhausted {
        channel: String,
        requested: usize,
        available: usize,
    },
}

/// Named input streams for one mixture run.
#[derive(Debug, Default, Clone)]
pub struct MixSources {
    /// Decomposed agent buckets (reasoning / retrieval / understanding).
    pub capability: BTreeMap<CapabilityTag, Vec<ChatConversation>>,
    /// ReAct-rendered agent trajectories.
    pub react: Vec<ChatConversation>,
    pub format_pairs: Vec<ChatConversation>,
    pub negatives: Vec<ChatConversation>,
    pub general: Vec<ChatConversation>,
}

/// Accounting for one channel of the mixture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub available: usize,
    pub target: usize,
    pub taken: usize,
    /// Extra draws beyond `available` when oversampling repeated samples.
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub samples: usize,
    pub tokens_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub seed: u64,
    pub spec_sha256: String,
    pub total: usize,
    /// Pre-slice channel accounting.
    pub channels: BTreeMap<String, ChannelStats>,
    /// Post-slice per-source sample and token totals; sums to `total`.
    pub per_source: BTreeMap<String, SourceStats>,
}

#[derive(Debug)]
pub struct MixOutput {
    pub corpus: Vec<ChatConversation>,
    pub manifest: MixManifest,
}

/// Draws `target` samples from `items` as a seeded permutation prefix;
/// with oversampling, short channels cycle their permutation and log the
/// repeats.
fn draw(
    items: &[ChatConversation],
    target: usize,
    seed: u64,
    oversample: bool,
    channel: &str,
) -> Result<(Vec<ChatConversation>, ChannelStats), MixError> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let stats = ChannelStats {
        available: items.len(),
        target,
        taken: target,
        repeats: target.saturating_sub(items.len()),
    };
    if target > items.len() {
        if !oversample {
            return Err(MixError::SourceExhausted {
                channel: channel.to_string(),
                requested: target,
                available: items.len(),
            });
        }
        if items.is_empty() {
            return Err(MixError::SourceExhausted {
                channel: channel.to_string(),
                requested: target,
                available: 0,
            });
        }
    }
    let selected = order
        .iter()
        .cycle()
        .take(target)
        .map(|&i| items[i].clone())
        .collect();
    Ok((selected, stats))
}

/// Composes the final training mixture. See the module docs for the five
/// channels; all selection and ordering is a pure function of sources,
/// spec, and seed.
pub fn compose_mixture(sources: &MixSources, spec: &MixSpec) -> Result<MixOutput, MixError> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(MixError::InvalidSpec(violations));
    }
    let seed = spec.seed;
    let mut channels: BTreeMap<String, ChannelStats> = BTreeMap::new();
    let mut picked: Vec<ChatConversation> = Vec::new();

    // Capability channel: apportion the (auto or explicit) total over the
    // weighted buckets. The auto total is the largest size every positive-
    // weight bucket can serve; explicit totals beyond availability need
    // oversampling.
    let tags: Vec<CapabilityTag> = spec.capability_weights.keys().copied().collect();
    let weights: Vec<f64> = tags.iter().map(|t| spec.capability_weights[t]).collect();
    let avail: Vec<usize> = tags
        .iter()
        .map(|t| sources.capability.get(t).map_or(0, Vec::len))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    // react_fraction 1.0 means a fully ReAct-formatted corpus: no finite
    // aligned-chat count satisfies the fraction, so the channel empties.
    let capability_total = if spec.react_fraction >= 1.0 {
        0
    } else {
        match spec.capability_total {
            Some(total) => total,
            None => {
                let mut total = tags
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| weights[*i] > 0.0)
                    .map(|(i, _)| (avail[i] as f64 * weight_sum / weights[i]).floor() as usize)
                    .min()
                    .unwrap_or(0);
                // Remainder assignment can push one bucket a sample over its
                // availability; back off until the apportionment fits.
                while total > 0 {
                    let counts = apportion(total, &weights);
                    if counts.iter().zip(&avail).all(|(c, a)| c <= a) {
                        break;
                    }
                    total -= 1;
                }
                total
            }
        }
    };
    let capability_counts = apportion(capability_total, &weights);
    let mut chat_taken = 0usize;
    for ((tag, count), bucket_avail) in tags.iter().zip(&capability_counts).zip(&avail) {
        let bucket: &[ChatConversation] =
            sources.capability.get(tag).map_or(&[][..], Vec::as_slice);
        debug_assert_eq!(bucket.len(), *bucket_avail);
        let (mut selected, stats) = draw(
            bucket,
            *count,
            derive_seed(seed, &format!("mix/select/{tag}")),
            spec.oversample,
            &format!("capability/{tag}"),
        )?;
        channels.insert(format!("capability/{tag}"), stats);
        chat_taken += selected.len();
        picked.append(&mut selected);
    }

    // ReAct remix: size the react channel so react samples make up
    // react_fraction of all agent-trajectory data.
    let react_target = if spec.react_fraction >= 1.0 {
        sources.react.len()
    } else {
        ((chat_taken as f64) * spec.react_fraction / (1.0 - spec.react_fraction)).round() as usize
    };
    let (mut react_selected, react_stats) = draw(
        &sources.react,
        react_target,
        derive_seed(seed, "mix/select/react"),
        spec.oversample,
        "react",
    )?;
    channels.insert("react".to_string(), react_stats);
    picked.append(&mut react_selected);

    // Format-instruction pairs enter at a fixed count. They are synthesized
    // upstream, so a shortfall means the pipeline was miswired; repeating
    // them would only clone identical pairs.
    let (mut format_selected, format_stats) = draw(
        &sources.format_pairs,
        spec.instruction_pairs,
        derive_seed(seed, "mix/select/format"),
        false,
        "format-instruction",
    )?;
    channels.insert("format-instruction".to_string(), format_stats);
    picked.append(&mut format_selected);

    // Negatives are few and purpose-built: all of them go in.
    let (mut negative_selected, negative_stats) = draw(
        &sources.negatives,
        sources.negatives.len(),
        derive_seed(seed, "mix/select/negative"),
        false,
        "negative",
    )?;
    channels.insert("negative".to_string(), negative_stats);
    picked.append(&mut negative_selected);

    // General chat balances everything agent-flavored at the given ratio.
    let agent_total = picked.len();
    let general_target = ((agent_total as f64) * spec.general_agent_ratio).round() as usize;
    let (mut general_selected, general_stats) = draw(
        &sources.general,
        general_target,
        derive_seed(seed, "mix/select/general"),
        spec.oversample,
        "general",
    )?;
    channels.insert("general".to_string(), general_stats);
    picked.append(&mut general_selected);

    // One permutation provides both the output shuffle and the nested
    // fraction slice (the slice is a prefix of the shuffled order).
    let corpus = slice_fraction(&picked, spec.data_fraction, derive_seed(seed, "mix/order"));

    let counter = ApproxTokenCounter;
    let mut per_source: BTreeMap<String, SourceStats> = BTreeMap::new();
    for conv in &corpus {
        let entry = per_source.entry(conv.source.clone()).or_default();
        entry.samples += 1;
        entry.tokens_m += conv.tokens(&counter) as f64 / 1.0e6;
    }

    let manifest = MixManifest {
        seed,
        spec_sha256: spec.sha256(),
        total: corpus.len(),
        channels,
        per_source,
    };
    Ok(MixOutput { corpus, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::{ChatTurn, Origin, Style, TurnKind};

    fn conv(id: &str, source: &str, style: Style) -> ChatConversation {
        ChatConversation::new(
            id,
            source,
            style,
            Origin {
                raw_id: None,
                transform: "test-v0".to_string(),
            },
            vec![],
            vec![
                ChatTurn::user(format!("question {id}"), TurnKind::Plain),
                ChatTurn::assistant(format!("answer {id}"), TurnKind::Plain),
            ],
        )
        .unwrap()
    }

    fn batch(prefix: &str, source: &str, style: Style, n: usize) -> Vec<ChatConversation> {
        (0..n)
            .map(|i| conv(&format!("{prefix}-{i:05}"), source, style))
            .collect()
    }

    #[test]
    fn apportion_matches_direct_oracle() {
        assert_eq!(apportion(10_000, &[3.0, 1.0]), vec![7_500, 2_500]);
        assert_eq!(apportion(0, &[1.0, 2.0]), vec![0, 0]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]), vec![3, 2, 2]);
        assert_eq!(apportion(5, &[1.0, 0.0]), vec![5, 0]);
    }

    #[test]
    fn apportion_stays_within_one_of_exact() {
        let weights = [1.0, 0.25, 0.75, 2.5];
        let sum: f64 = weights.iter().sum();
        for total in [1usize, 10, 97, 1234] {
            let counts = apportion(total, &weights);
            assert_eq!(counts.iter().sum::<usize>(), total);
            for (c, w) in counts.iter().zip(&weights) {
                let exact = total as f64 * w / sum;
                assert!((*c as f64 - exact).abs() <= 1.0, "{c} vs {exact}");
            }
        }
    }

    #[test]
    fn slices_nest_and_round() {
        let items: Vec<usize> = (0..1000).collect();
        let s25 = slice_fraction(&items, 0.25, 9);
        let s50 = slice_fraction(&items, 0.5, 9);
        let s100 = slice_fraction(&items, 1.0, 9);
        assert_eq!(s25.len(), 250);
        assert_eq!(s50.len(), 500);
        assert_eq!(s100.len(), 1000);
        assert_eq!(&s50[..250], &s25[..]);
        assert_eq!(&s100[..500], &s50[..]);
        assert!(slice_fraction(&items, 0.0, 9).is_empty());
        let mut sorted = s100.clone();
        sorted.sort();
        assert_eq!(sorted, items);
    }

    fn default_sources() -> MixSources {
        let mut capability = BTreeMap::new();
        capability.insert(
            CapabilityTag::Reasoning,
            batch("rsn", "toolbench", Style::Chat, 400),
        );
        capability.insert(
            CapabilityTag::Retrieval,
            batch("rtv", "toolbench", Style::Chat, 400),
        );
        capability.insert(
            CapabilityTag::Understanding,
            batch("und", "toolbench", Style::Chat, 400),
        );
        MixSources {
            capability,
            react: batch("rct", "toolbench", Style::React, 200),
            format_pairs: batch("fmt", "synthetic:format", Style::FormatInstruction, 50),
            negatives: batch("neg", "synthetic:negative", Style::Negative, 30),
            general: batch("gen", "general", Style::Chat, 2000),
        }
    }

    fn default_spec() -> MixSpec {
        MixSpec {
            instruction_pairs: 50,
            seed: 42,
            ..MixSpec::default()
        }
    }

    #[test]
    fn default_recipe_proportions() {
        let output = compose_mixture(&default_sources(), &default_spec()).unwrap();
        let channels = &output.manifest.channels;
        // Auto total: reasoning is the binding bucket (weight 1, 400
        // available, weight sum 2): total 800 -> 400/100/300.
        assert_eq!(channels["capability/reasoning"].taken, 400);
        assert_eq!(channels["capability/retrieval"].taken, 100);
        assert_eq!(channels["capability/understanding"].taken, 300);
        // React is 10% of trajectory data: 800 chat + 89 react.
        let react = channels["react"].taken;
        let chat = 800;
        let fraction = react as f64 / (react + chat) as f64;
        assert!((fraction - 0.10).abs() < 0.001, "react fraction {fraction}");
        // General matches agent 1:1.
        let agent =
            chat + react + channels["format-instruction"].taken + channels["negative"].taken;
        assert_eq!(channels["general"].taken, agent);
        assert_eq!(output.manifest.total, 2 * agent);
        // Per-source counts sum to the corpus size.
        let sum: usize = output.manifest.per_source.values().map(|s| s.samples).sum();
        assert_eq!(sum, output.corpus.len());
    }

    #[test]
    fn full_react_fraction_empties_chat_channel() {
        let spec = MixSpec {
            react_fraction: 1.0,
            ..default_spec()
        };
        let output = compose_mixture(&default_sources(), &spec).unwrap();
        let channels = &output.manifest.channels;
        assert_eq!(channels["capability/reasoning"].taken, 0);
        assert_eq!(channels["capability/retrieval"].taken, 0);
        assert_eq!(channels["capability/understanding"].taken, 0);
        assert_eq!(channels["react"].taken, 200);
    }

    #[test]
    fn output_is_deterministic() {
        let a = compose_mixture(&default_sources(), &default_spec()).unwrap();
        let b = compose_mixture(&default_sources(), &default_spec()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.manifest, b.manifest);
        let mut other = default_spec();
        other.seed = 43;
        let c = compose_mixture(&default_sources(), &other).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn single_source_identity_permutation() {
        let mut sources = MixSources::default();
        let items = batch("only", "toolbench", Style::Chat, 120);
        sources
            .capability
            .insert(CapabilityTag::Reasoning, items.clone());
        let mut weights = BTreeMap::new();
        weights.insert(CapabilityTag::Reasoning, 1.0);
        let spec = MixSpec {
            capability_weights: weights,
            react_fraction: 0.0,
            general_agent_ratio: 0.0,
            instruction_pairs: 0,
            seed: 7,
            ..MixSpec::default()
        };
        let output = compose_mixture(&sources, &spec).unwrap();
        assert_eq!(output.corpus.len(), 120);
        let mut sorted = output.corpus.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(sorted, items);
        assert_ne!(output.corpus, items);
    }

    #[test]
    fn explicit_total_matches_direct_count_oracle() {
        let mut sources = MixSources::default();
        sources.capability.insert(
            CapabilityTag::Reasoning,
            batch("a", "toolbench", Style::Chat, 10_000),
        );
        sources.capability.insert(
            CapabilityTag::Retrieval,
            batch("b", "toolbench", Style::Chat, 10_000),
        );
        let mut weights = BTreeMap::new();
        weights.insert(CapabilityTag::Reasoning, 3.0);
        weights.insert(CapabilityTag::Retrieval, 1.0);
        let spec = MixSpec {
            capability_weights: weights,
            capability_total: Some(10_000),
            react_fraction: 0.0,
            general_agent_ratio: 0.0,
            instruction_pairs: 0,
            seed: 1,
            ..MixSpec::default()
        };
        let output = compose_mixture(&sources, &spec).unwrap();
        assert_eq!(
            output.manifest.channels["capability/reasoning"].taken,
            7_500
        );
        assert_eq!(
            output.manifest.channels["capability/retrieval"].taken,
            2_500
        );
    }

    #[test]
    fn exhausted_channel_errors_without_oversampling() {
        let mut sources = default_sources();
        sources.general.truncate(10);
        let err = compose_mixture(&sources, &default_spec()).unwrap_err();
        match err {
            MixError::SourceExhausted {
                channel, available, ..
            } => {
                assert_eq!(channel, "general");
                assert_eq!(available, 10);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn oversampling_repeats_and_logs() {
        let mut sources = default_sources();
        sources.general.truncate(100);
        let spec = MixSpec {
            oversample: true,
            ..default_spec()
        };
        let output = compose_mixture(&sources, &spec).unwrap();
        let stats = output.manifest.channels["general"];
        assert_eq!(stats.available, 100);
        assert!(stats.repeats > 0);
        assert_eq!(stats.taken, stats.target);
    }

    #[test]
    fn mixing_never_mutates_samples() {
        let sources = default_sources();
        let mut known: std::collections::HashSet<String> = std::collections::HashSet::new();
        for conv in sources
            .capability
            .values()
            .flatten()
            .chain(&sources.react)
            .chain(&sources.format_pairs)
            .chain(&sources.negatives)
            .chain(&sources.general)
        {
            known.insert(conv.checksum());
        }
        let output = compose_mixture(&sources, &default_spec()).unwrap();
        for conv in &output.corpus {
            assert!(known.contains(&conv.checksum()));
        }
    }

    #[test]
    fn data_fraction_slices_nested() {
        let sources = default_sources();
        let full = compose_mixture(&sources, &default_spec()).unwrap();
        let spec25 = MixSpec {
            data_fraction: 0.25,
            ..default_spec()
        };
        let quarter = compose_mixture(&sources, &spec25).unwrap();
        assert_eq!(
            quarter.corpus.len(),
            ((full.corpus.len() as f64) * 0.25).round() as usize
        );
        assert_eq!(&full.corpus[..quarter.corpus.len()], &quarter.corpus[..]);
    }

    #[test]
    fn spec_validation_names_keys() {
        let mut spec = MixSpec {
            react_fraction: 1.5,
            ..MixSpec::default()
        };
        spec.capability_weights
            .insert(CapabilityTag::Reasoning, -1.0);
        spec.capability_weights
            .insert(CapabilityTag::InstructionFollowing, 0.5);
        let violations = spec.validate();
        assert!(violations.iter().any(|v| v.contains("react_fraction")));
        assert!(violations
            .iter()
            .any(|v| v.contains("capability_weights.reasoning")));
        assert!(violations
            .iter()
            .any(|v| v.contains("instruction_following")));
        assert!(compose_mixture(&MixSources::default(), &spec).is_err());
    }

    #[test]
    fn spec_hash_tracks_content() {
        let a = MixSpec::default();
        let mut b = MixSpec::default();
        assert_eq!(a.sha256(), b.sha256());
        b.react_fraction = 0.2;
        assert_ne!(a.sha256(), b.sha256());
    }
}
