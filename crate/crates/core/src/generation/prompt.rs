//! Prompt construction for every generation method.

use std::collections::BTreeSet;

use crate::encoders::JointEncoder;
use crate::error::{Error, Result};
use crate::schema::{AttributeSet, CategoryCombination, Phrase};
use crate::tokens::{FairTokenTable, InclusivePrompt, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HardPromptMode {
    /// Every category is spelled out in the positive prompt.
    Hps,
    /// Categories with a negation phrase go to the negative prompt instead.
    Hpsn,
}

/// Base prompt tokens followed by the fair tokens of `combination`.
pub fn assemble_prompt<E: JointEncoder + ?Sized>(
    prompt: &str,
    table: &FairTokenTable,
    combination: &CategoryCombination,
    encoder: &E,
) -> Result<InclusivePrompt> {
    let base = encoder.tokenize(prompt)?;
    InclusivePrompt::assemble(
        base,
        table,
        combination,
        encoder.handle().max_sequence_length,
    )
}

fn replace_subject(prompt: &str, subject: &str) -> String {
    match prompt.trim_end().rsplit_once(char::is_whitespace) {
        Some((head, _)) => format!("{head} {subject}"),
        None => subject.to_string(),
    }
}

/// `(positive text, negative text)` for a hard-prompt method.
pub fn build_hard_prompt(
    prompt: &str,
    attr_set: &AttributeSet,
    combination: &CategoryCombination,
    mode: HardPromptMode,
) -> Result<(String, String)> {
    attr_set.check_combination(combination)?;
    let mut positive = prompt.trim().to_string();
    let mut appended = Vec::new();
    let mut negative = Vec::new();
    for (a, &i) in attr_set.attributes().iter().zip(combination.indices()) {
        let cat = &a.categories[i];
        if mode == HardPromptMode::Hpsn {
            if let Some(neg) = &cat.negation {
                negative.push(neg.clone());
                continue;
            }
        }
        match &cat.phrase {
            Some(Phrase::Subject(s)) => positive = replace_subject(&positive, s),
            Some(Phrase::Append(s)) => appended.push(s.clone()),
            None => {
                return Err(Error::Schema(format!(
                    "category `{}` of attribute `{}` has no hard-prompt phrase",
                    cat.name, a.name
                )))
            }
        }
    }
    for s in appended {
        positive.push(' ');
        positive.push_str(&s);
    }
    Ok((positive, negative.join(", ")))
}

/// Hard prompt (negative prompting) for `hpsn_attrs`, with the fair tokens of
/// `itigen_attrs` appended after the positive prompt.
pub fn hybrid_conditioning<E: JointEncoder + ?Sized>(
    prompt: &str,
    table: Option<&FairTokenTable>,
    itigen_attrs: &AttributeSet,
    itigen_combination: &CategoryCombination,
    hpsn_attrs: &AttributeSet,
    hpsn_combination: &CategoryCombination,
    encoder: &E,
) -> Result<(TokenSeq, String)> {
    let itigen: BTreeSet<&str> = itigen_attrs
        .attributes()
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    if let Some(dup) = hpsn_attrs
        .attributes()
        .iter()
        .find(|a| itigen.contains(a.name.as_str()))
    {
        return Err(Error::Config(format!(
            "attribute `{}` is assigned to both fair tokens and negative prompting",
            dup.name
        )));
    }
    let (positive, negative) =
        build_hard_prompt(prompt, hpsn_attrs, hpsn_combination, HardPromptMode::Hpsn)?;
    if itigen_attrs.is_empty() {
        itigen_attrs.check_combination(itigen_combination)?;
        return Ok((encoder.tokenize(&positive)?, negative));
    }
    let table = table
        .ok_or_else(|| Error::Config("fair-token attributes given without a token table".into()))?;
    table.check_schema(itigen_attrs)?;
    itigen_attrs.check_combination(itigen_combination)?;
    let assembled = assemble_prompt(&positive, table, itigen_combination, encoder)?;
    Ok((assembled.assembled_tokens, negative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{ToyEncoder, ToyEncoderSpec};
    use crate::schema::{AttributeSpec, CategorySpec};
    use rand::SeedableRng;

    fn gender() -> AttributeSpec {
        AttributeSpec::new(
            "Gender",
            vec![
                CategorySpec::named("male").with_phrase(Phrase::Subject("man".into())),
                CategorySpec::named("female").with_phrase(Phrase::Subject("woman".into())),
            ],
        )
        .unwrap()
    }

    fn eyeglasses() -> AttributeSpec {
        AttributeSpec::new(
            "Eyeglasses",
            vec![
                CategorySpec::named("without")
                    .with_phrase(Phrase::Append("without eyeglasses".into()))
                    .with_negation("eyeglasses"),
                CategorySpec::named("with").with_phrase(Phrase::Append("with eyeglasses".into())),
            ],
        )
        .unwrap()
    }

    fn age() -> AttributeSpec {
        AttributeSpec::plain("Age", &["young", "old"]).unwrap()
    }

    const T: &str = "a headshot of a person";

    fn enc() -> ToyEncoder {
        ToyEncoder::new(ToyEncoderSpec::new(0, 4, 4)).unwrap()
    }

    #[test]
    fn hps_female() {
        let s = AttributeSet::new(vec![gender()]).unwrap();
        let got =
            build_hard_prompt(T, &s, &CategoryCombination(vec![1]), HardPromptMode::Hps).unwrap();
        assert_eq!(got, ("a headshot of a woman".to_string(), String::new()));
    }

    #[test]
    fn hpsn_moves_negated_category_to_negative_prompt() {
        let s = AttributeSet::new(vec![eyeglasses()]).unwrap();
        let c = CategoryCombination(vec![0]);
        assert_eq!(
            build_hard_prompt(T, &s, &c, HardPromptMode::Hpsn).unwrap(),
            (T.to_string(), "eyeglasses".to_string())
        );
        assert_eq!(
            build_hard_prompt(T, &s, &c, HardPromptMode::Hps).unwrap(),
            (
                "a headshot of a person without eyeglasses".to_string(),
                String::new()
            )
        );
    }

    #[test]
    fn no_attributes_is_identity() {
        let got = build_hard_prompt(
            T,
            &AttributeSet::empty(),
            &CategoryCombination(vec![]),
            HardPromptMode::Hpsn,
        )
        .unwrap();
        assert_eq!(got, (T.to_string(), String::new()));
    }

    #[test]
    fn combined_hard_prompt() {
        let s = AttributeSet::new(vec![gender(), eyeglasses()]).unwrap();
        let got = build_hard_prompt(
            T,
            &s,
            &CategoryCombination(vec![1, 1]),
            HardPromptMode::Hpsn,
        )
        .unwrap();
        assert_eq!(got.0, "a headshot of a woman with eyeglasses");
    }

    #[test]
    fn missing_phrase_names_category() {
        let s = AttributeSet::new(vec![age()]).unwrap();
        match build_hard_prompt(T, &s, &CategoryCombination(vec![1]), HardPromptMode::Hps) {
            Err(Error::Schema(msg)) => assert!(msg.contains("`old`") && msg.contains("`Age`")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_attribute_set_assembles_to_base() {
        let e = enc();
        let table = FairTokenTable::zeros(&AttributeSet::empty(), 4);
        let p = assemble_prompt(T, &table, &CategoryCombination(vec![]), &e).unwrap();
        assert_eq!(p.assembled_tokens, e.tokenize(T).unwrap());
    }

    #[test]
    fn plug_and_play_swaps_only_base_tokens() {
        let e = enc();
        let s = AttributeSet::new(vec![age()]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let table = FairTokenTable::random_init(&s, 4, 1.0, &mut rng);
        let c = CategoryCombination(vec![1]);
        let person = assemble_prompt(T, &table, &c, &e).unwrap();
        let doctor = assemble_prompt("a headshot of a doctor", &table, &c, &e).unwrap();
        assert_eq!(person.assembled_tokens.len(), 5 + 3);
        assert_eq!(doctor.assembled_tokens[5..], person.assembled_tokens[5..]);
        assert_ne!(doctor.base_tokens, person.base_tokens);
    }

    #[test]
    fn hybrid_appends_tokens_after_hard_prompt() {
        let e = enc();
        let it = AttributeSet::new(vec![age()]).unwrap();
        let hp = AttributeSet::new(vec![eyeglasses()]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let table = FairTokenTable::random_init(&it, 4, 1.0, &mut rng);
        let (tokens, negative) = hybrid_conditioning(
            T,
            Some(&table),
            &it,
            &CategoryCombination(vec![1]),
            &hp,
            &CategoryCombination(vec![0]),
            &e,
        )
        .unwrap();
        assert_eq!(negative, "eyeglasses");
        let base = e.tokenize(T).unwrap();
        assert_eq!(tokens[..5], base[..]);
        let fair: TokenSeq = table.tokens(0, 1).map(<[f64]>::to_vec).collect();
        assert_eq!(tokens[5..], fair[..]);

        // with eyeglasses: the phrase lands before the fair tokens
        let (tokens, negative) = hybrid_conditioning(
            T,
            Some(&table),
            &it,
            &CategoryCombination(vec![0]),
            &hp,
            &CategoryCombination(vec![1]),
            &e,
        )
        .unwrap();
        assert_eq!(negative, "");
        assert_eq!(tokens.len(), 7 + 3);
    }

    #[test]
    fn degenerate_hybrids() {
        let e = enc();
        let it = AttributeSet::new(vec![age()]).unwrap();
        let hp = AttributeSet::new(vec![eyeglasses()]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let table = FairTokenTable::random_init(&it, 4, 1.0, &mut rng);
        let c = CategoryCombination(vec![1]);

        let (tokens, negative) = hybrid_conditioning(
            T,
            Some(&table),
            &it,
            &c,
            &AttributeSet::empty(),
            &CategoryCombination(vec![]),
            &e,
        )
        .unwrap();
        assert_eq!(
            tokens,
            assemble_prompt(T, &table, &c, &e).unwrap().assembled_tokens
        );
        assert_eq!(negative, "");

        let (tokens, negative) = hybrid_conditioning(
            T,
            None,
            &AttributeSet::empty(),
            &CategoryCombination(vec![]),
            &hp,
            &c,
            &e,
        )
        .unwrap();
        let (pos, neg) = build_hard_prompt(T, &hp, &c, HardPromptMode::Hpsn).unwrap();
        assert_eq!(tokens, e.tokenize(&pos).unwrap());
        assert_eq!(negative, neg);
    }

    #[test]
    fn overlapping_hybrid_rejected() {
        let e = enc();
        let it = AttributeSet::new(vec![eyeglasses()]).unwrap();
        let table = FairTokenTable::zeros(&it, 4);
        let c = CategoryCombination(vec![0]);
        assert!(matches!(
            hybrid_conditioning(T, Some(&table), &it, &c, &it, &c, &e),
            Err(Error::Config(_))
        ));
    }
}
