use clap::ValueEnum;
use nfb_core::analytics::{multi_session_report, PlotData, SessionMetrics, SessionPlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    /// Plot data: per-session traces, threshold spans, stage bands and the
    /// multi-session table.
    Json,
}

pub fn render(
    format: Format,
    metrics: &[SessionMetrics],
    plots: Vec<SessionPlot>,
    grouping: &[usize],
) -> String {
    let report = multi_session_report(metrics, grouping);
    match format {
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
        Format::Json => {
            let data = PlotData {
                sessions: plots,
                report,
            };
            let mut s = serde_json::to_string_pretty(&data).expect("plot data serializes");
            s.push('\n');
            s
        }
    }
}
