//! Prompt templates for the five tasks. These strings are a wire contract:
//! scores from different runs are only comparable if the text is identical.

use crate::catalog::Aspect;

pub fn ap_prompt(category: &str, title: &str, key: &str) -> String {
    format!(
        "For an e-commerce website, under the category \"{category}\", the listing with the title \"{title}\" has the following aspect key-value pairs:\n{key}:"
    )
}

/// One `key: value` line per aspect.
pub fn ap_mc_candidate(title: &str, aspects: &[Aspect]) -> String {
    let mut text = format!(
        "For an e-commerce website, the listing with the title \"{title}\" has the following aspect key-value pairs associated with it:"
    );
    for aspect in aspects {
        text.push('\n');
        text.push_str(&aspect.key);
        text.push_str(": ");
        text.push_str(&aspect.value);
    }
    text
}

/// `symbol` is `$` for USD; `amount` is already formatted with 2 decimals.
pub fn pp_mc_candidate(title: &str, symbol: &str, amount: &str) -> String {
    format!("For the listing with the title \"{title}\", the final selling price was {symbol}{amount}.")
}

pub fn mca_prompt(category: &str, key: &str) -> String {
    format!(
        "For an e-commerce website, under the category \"{category}\", the following are the most common aspect values for the aspect key \"{key}\":"
    )
}

pub fn mca_mc_candidate(category: &str, key: &str, value: &str) -> String {
    format!(
        "For an e-commerce website, under the category \"{category}\", the most common aspect value for the aspect key \"{key}\" is \"{value}\"."
    )
}
