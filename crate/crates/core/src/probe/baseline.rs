use std::collections::{BTreeMap, HashMap};

use super::ProbeError;
use crate::corpus::Upos;

/// Accuracy of predicting, for each test form, the tag it carried most
/// often in training. Ties between tags go to the one more frequent in the
/// whole training set, then to tag order. Forms never seen in training get
/// the training-set majority tag.
pub fn baseline_most_common_pos<'a, A, B>(train: A, test: B) -> Result<f64, ProbeError>
where
    A: IntoIterator<Item = (&'a str, Upos)>,
    B: IntoIterator<Item = (&'a str, Upos)>,
{
    let mut by_form: HashMap<&str, BTreeMap<Upos, u64>> = HashMap::new();
    let mut global: BTreeMap<Upos, u64> = BTreeMap::new();
    for (form, tag) in train {
        *by_form.entry(form).or_default().entry(tag).or_default() += 1;
        *global.entry(tag).or_default() += 1;
    }
    if global.is_empty() {
        return Err(ProbeError::Empty);
    }
    let rank = |tag: &Upos, count: u64| (count, global.get(tag).copied().unwrap_or(0), std::cmp::Reverse(*tag));
    let pick = |counts: &BTreeMap<Upos, u64>| {
        counts
            .iter()
            .max_by_key(|(t, &c)| rank(t, c))
            .map(|(t, _)| *t)
            .expect("non-empty counts")
    };
    let fallback = pick(&global);
    let prediction: HashMap<&str, Upos> = by_form.iter().map(|(f, c)| (*f, pick(c))).collect();

    let (mut correct, mut total) = (0u64, 0u64);
    for (form, tag) in test {
        total += 1;
        correct += u64::from(prediction.get(form).copied().unwrap_or(fallback) == tag);
    }
    if total == 0 {
        return Err(ProbeError::Empty);
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Upos::*;

    #[test]
    fn unambiguous_seen_forms() {
        let train = [("the", Det), ("cat", Noun), ("runs", Verb)];
        let test = [("cat", Noun), ("the", Det)];
        assert_eq!(baseline_most_common_pos(train, test).unwrap(), 1.0);
    }

    #[test]
    fn unseen_forms_get_global_majority() {
        let train = [("a", Noun), ("b", Noun), ("c", Verb)];
        let test = [("x", Noun), ("y", Verb), ("z", Adj), ("w", Noun)];
        assert_eq!(baseline_most_common_pos(train, test).unwrap(), 0.5);
    }

    #[test]
    fn ten_token_fixture_with_ambiguous_form() {
        // "run" is VERB twice and NOUN once in training.
        let train = [
            ("run", Verb),
            ("run", Verb),
            ("run", Noun),
            ("the", Det),
            ("dog", Noun),
            ("fast", Adv),
        ];
        // Predictions: run→VERB (one hit, one miss), dog→NOUN, fast→ADV.
        let test = [("run", Verb), ("run", Noun), ("dog", Noun), ("fast", Adj)];
        assert_eq!(baseline_most_common_pos(train, test).unwrap(), 2.0 / 4.0);
    }

    #[test]
    fn ties_use_global_frequency() {
        // "set" is NOUN once and VERB once; VERB is globally more frequent.
        let train = [("set", Noun), ("set", Verb), ("go", Verb), ("be", Verb)];
        assert_eq!(baseline_most_common_pos(train, [("set", Verb)]).unwrap(), 1.0);
    }

    #[test]
    fn empty_train_is_error() {
        assert!(baseline_most_common_pos([], [("a", Noun)]).is_err());
    }
}
