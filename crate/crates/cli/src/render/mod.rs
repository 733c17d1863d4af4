mod html;
mod svg;

pub use html::explanation_html;
pub use svg::{line_chart, scatter_with_diagonal, Series};
