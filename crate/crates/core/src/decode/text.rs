use serde::{Deserialize, Serialize};

/// Characters removed by [`normalize_text`]: ASCII punctuation, Devanagari
/// danda and double danda, and common typographic marks.
pub const DEFAULT_PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~।॥“”‘’–—…«»¿¡·";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeConfig {
    pub punctuation: String,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self { punctuation: DEFAULT_PUNCTUATION.to_string() }
    }
}

/// Spells a non-negative integer as words, or `None` when out of range.
pub trait NumberSpeller {
    fn spell(&self, n: u64) -> Option<String>;
}

pub struct EnglishSpeller;

const EN_ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const EN_TENS: [&str; 10] = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

impl EnglishSpeller {
    fn below_thousand(n: u64, out: &mut Vec<&'static str>) {
        if n >= 100 {
            out.push(EN_ONES[(n / 100) as usize]);
            out.push("hundred");
        }
        let r = n % 100;
        if r == 0 {
            return;
        }
        if r < 20 {
            out.push(EN_ONES[r as usize]);
        } else {
            out.push(EN_TENS[(r / 10) as usize]);
            if r % 10 != 0 {
                out.push(EN_ONES[(r % 10) as usize]);
            }
        }
    }
}

impl NumberSpeller for EnglishSpeller {
    fn spell(&self, n: u64) -> Option<String> {
        if n == 0 {
            return Some("zero".into());
        }
        if n >= 1_000_000_000_000 {
            return None;
        }
        let mut out = Vec::new();
        for (scale, word) in [(1_000_000_000, "billion"), (1_000_000, "million"), (1_000, "thousand"), (1, "")] {
            let chunk = (n / scale) % 1000;
            if chunk > 0 {
                Self::below_thousand(chunk, &mut out);
                if !word.is_empty() {
                    out.push(word);
                }
            }
        }
        Some(out.join(" "))
    }
}

pub struct HindiSpeller;

const HI_BELOW_100: [&str; 100] = [
    "शून्य", "एक", "दो", "तीन", "चार", "पाँच", "छह", "सात", "आठ", "नौ", "दस", "ग्यारह", "बारह", "तेरह", "चौदह", "पंद्रह",
    "सोलह", "सत्रह", "अठारह", "उन्नीस", "बीस", "इक्कीस", "बाईस", "तेईस", "चौबीस", "पच्चीस", "छब्बीस", "सत्ताईस",
    "अट्ठाईस", "उनतीस", "तीस", "इकतीस", "बत्तीस", "तैंतीस", "चौंतीस", "पैंतीस", "छत्तीस", "सैंतीस", "अड़तीस",
    "उनतालीस", "चालीस", "इकतालीस", "बयालीस", "तैंतालीस", "चवालीस", "पैंतालीस", "छियालीस", "सैंतालीस", "अड़तालीस",
    "उनचास", "पचास", "इक्यावन", "बावन", "तिरपन", "चौवन", "पचपन", "छप्पन", "सत्तावन", "अट्ठावन", "उनसठ", "साठ",
    "इकसठ", "बासठ", "तिरसठ", "चौंसठ", "पैंसठ", "छियासठ", "सड़सठ", "अड़सठ", "उनहत्तर", "सत्तर", "इकहत्तर", "बहत्तर",
    "तिहत्तर", "चौहत्तर", "पचहत्तर", "छिहत्तर", "सतहत्तर", "अठहत्तर", "उन्यासी", "अस्सी", "इक्यासी", "बयासी",
    "तिरासी", "चौरासी", "पचासी", "छियासी", "सत्तासी", "अट्ठासी", "नवासी", "नब्बे", "इक्यानबे", "बानबे", "तिरानबे",
    "चौरानबे", "पंचानबे", "छियानबे", "सत्तानबे", "अट्ठानबे", "निन्यानबे",
];

impl NumberSpeller for HindiSpeller {
    /// Indian grouping: लाख (10^5), हज़ार (10^3), सौ (10^2); below 10^6.
    fn spell(&self, n: u64) -> Option<String> {
        if n >= 1_000_000 {
            return None;
        }
        if n == 0 {
            return Some(HI_BELOW_100[0].into());
        }
        let mut out = Vec::new();
        for (scale, word) in [(100_000, "लाख"), (1_000, "हज़ार"), (100, "सौ")] {
            let k = n / scale % if scale == 100 { 10 } else { 100 };
            if k > 0 {
                out.push(HI_BELOW_100[k as usize]);
                out.push(word);
            }
        }
        let r = n % 100;
        if r > 0 {
            out.push(HI_BELOW_100[r as usize]);
        }
        Some(out.join(" "))
    }
}

/// Built-in speller for a language tag.
pub fn speller_for(lang: &str) -> Option<Box<dyn NumberSpeller>> {
    match lang.to_ascii_lowercase().as_str() {
        "en" | "eng" | "english" => Some(Box::new(EnglishSpeller)),
        "hi" | "hin" | "hindi" => Some(Box::new(HindiSpeller)),
        _ => None,
    }
}

fn ascii_digit(c: char) -> Option<u32> {
    match c {
        '0'..='9' => Some(c as u32 - '0' as u32),
        '०'..='९' => Some(c as u32 - '०' as u32),
        _ => None,
    }
}

/// Lowercases, removes punctuation, spells digit runs with the language's
/// speller and collapses whitespace. Digit-group commas (`1,000`) are
/// dropped. Without a speller, digits are kept and a warning is logged.
pub fn normalize_text(raw: &str, lang: &str) -> String {
    normalize_with(raw, lang, &NormalizeConfig::default())
}

pub fn normalize_with(raw: &str, lang: &str, cfg: &NormalizeConfig) -> String {
    let raw: Vec<char> = raw.chars().collect();
    let chars: Vec<char> = raw
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            let grouping = c == ','
                && i > 0
                && i + 1 < raw.len()
                && ascii_digit(raw[i - 1]).is_some()
                && ascii_digit(raw[i + 1]).is_some();
            !grouping && c != '\'' && c != '’'
        })
        .map(|(_, &c)| c)
        .collect();
    let mut spaced = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if cfg.punctuation.contains(c) {
            spaced.push(' ');
        } else if ascii_digit(c).is_some() {
            // isolate digit runs from adjacent letters
            let prev_digit = i > 0 && ascii_digit(chars[i - 1]).is_some();
            if !prev_digit {
                spaced.push(' ');
            }
            spaced.push(c);
            let next_digit = i + 1 < chars.len() && ascii_digit(chars[i + 1]).is_some();
            if !next_digit {
                spaced.push(' ');
            }
        } else {
            spaced.extend(c.to_lowercase());
        }
    }
    let speller = speller_for(lang);
    let mut warned = false;
    let mut words = Vec::new();
    for tok in spaced.split_whitespace() {
        let digits: Option<Vec<u32>> = tok.chars().map(ascii_digit).collect();
        let Some(digits) = digits else {
            words.push(tok.to_string());
            continue;
        };
        let value = digits.iter().try_fold(0u64, |acc, &d| acc.checked_mul(10)?.checked_add(d as u64));
        match (&speller, value) {
            (Some(sp), Some(v)) => match sp.spell(v) {
                Some(s) => words.push(s),
                None => {
                    log::warn!("number {tok} is out of range for the `{lang}` speller; kept as digits");
                    words.push(tok.to_string());
                }
            },
            _ => {
                if !warned {
                    log::warn!("no number speller for language `{lang}`; digits kept verbatim");
                    warned = true;
                }
                words.push(tok.to_string());
            }
        }
    }
    words.join(" ")
}
