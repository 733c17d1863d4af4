use std::fmt::Write as _;

use tlrp_core::Explanation;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Background of one token: red for positive, blue for negative relevance,
/// opacity `|r| / max |r|`.
fn token_color(r: f64, max_abs: f64) -> String {
    let alpha = if max_abs > 0.0 { r.abs() / max_abs } else { 0.0 };
    let (red, blue) = if r >= 0.0 { (255, 0) } else { (0, 255) };
    format!("rgba({red}, 0, {blue}, {alpha:.4})")
}

/// Static page with one `<span>` per token and no scripts.
pub fn explanation_html(words: &[String], e: &Explanation) -> String {
    let max_abs = e.token_relevances.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mut spans = String::new();
    for (word, &r) in words.iter().zip(&e.token_relevances) {
        let _ = write!(
            spans,
            "<span class=\"token\" style=\"background-color: {}\" title=\"{r:e}\">{}</span>\n",
            token_color(r, max_abs),
            escape(word)
        );
    }
    format!(
        "<!DOCTYPE html>
<html lang=\"en\">
<head>
<meta charset=\"utf-8\">
<title>{method} explanation</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
.tokens {{ line-height: 2.2; font-size: 1.2em; }}
.token {{ padding: 0.15em 0.3em; margin: 0 0.05em; border-radius: 0.2em; }}
.meta {{ color: #555; }}
</style>
</head>
<body>
<p class=\"meta\">method <b>{method}</b>, target <b>{target}</b>, output {score:e}, relevance sum {sum:e}</p>
<div class=\"tokens\">
{spans}</div>
</body>
</html>
",
        method = e.method,
        target = e.target,
        score = e.output_score,
        sum = e.relevance_sum(),
    )
}
