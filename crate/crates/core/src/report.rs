//! Summary tables, CSV, chart data, and SVG grouped bar charts per
//! (model, k).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::Analysis;
use crate::error::{Error, Result};
use crate::metrics::{ConditionResult, Effect};
use crate::prompt::PromptKind;

pub const FEMALE_COLOR: &str = "#1f77b4";
pub const MALE_COLOR: &str = "#ff7f0e";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    KnowledgeKind,
    Occupation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    TableText,
    Csv,
    ChartSvg,
    ChartData,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::TableText, Format::Csv, Format::ChartSvg, Format::ChartData];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "table-text" | "text" => Some(Format::TableText),
            "csv" => Some(Format::Csv),
            "chart-svg" | "svg" => Some(Format::ChartSvg),
            "chart-data" | "json" => Some(Format::ChartData),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub models: Vec<String>,
    pub ks: Vec<usize>,
    pub group_by: GroupBy,
    pub formats: BTreeSet<Format>,
}

impl ReportSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Usage("report needs at least one k, each at least 1".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Usage("report needs at least one output format".into()));
        }
        Ok(())
    }
}

/// One bar group: unweighted means across occupations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarGroup {
    pub label: String,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub n_occupations: usize,
    pub n_non_gendered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub model: String,
    pub k: usize,
    pub group_by: GroupBy,
    pub aggregate: String,
    pub series: Vec<Series>,
    pub groups: Vec<BarGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectCounts {
    pub kind: PromptKind,
    pub enhanced: usize,
    pub mitigated: usize,
    pub overturned: usize,
    pub unchanged: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceGap {
    pub model: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub charts: Vec<Chart>,
    pub effects: BTreeMap<String, Vec<EffectCounts>>,
    pub gaps: Vec<SliceGap>,
    pub gap_fraction: f64,
}

/// A rendered output file: relative name and contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

fn slice_key(model: &str, k: usize) -> String {
    format!("{model}@k{k}")
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean (female, male) per occupation, then across occupations.
fn bar_group(label: String, conditions: &[&ConditionResult]) -> BarGroup {
    let mut per_occupation: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for c in conditions {
        let e = per_occupation.entry(c.occupation.as_str()).or_default();
        e.0.push(c.p_female);
        e.1.push(c.p_male);
    }
    let female: Vec<f64> = per_occupation.values().filter_map(|(f, _)| mean(f)).collect();
    let male: Vec<f64> = per_occupation.values().filter_map(|(_, m)| mean(m)).collect();
    BarGroup {
        label,
        female: mean(&female),
        male: mean(&male),
        n_occupations: per_occupation.len(),
        n_non_gendered: conditions.iter().filter(|c| c.non_gendered).count(),
    }
}

pub fn build_report(analysis: &Analysis, spec: &ReportSpec) -> Result<Report> {
    spec.validate()?;
    let mut charts = Vec::new();
    let mut effects = BTreeMap::new();
    let mut gaps = Vec::new();
    for model in &spec.models {
        for &k in &spec.ks {
            let slice: Vec<&ConditionResult> = analysis
                .conditions()
                .filter(|c| &c.model_id == model && c.k == k)
                .collect();
            if slice.is_empty() {
                gaps.push(SliceGap {
                    model: model.clone(),
                    k,
                });
                continue;
            }
            let groups = match spec.group_by {
                GroupBy::KnowledgeKind => PromptKind::ALL
                    .iter()
                    .map(|&kind| {
                        let members: Vec<_> = slice.iter().copied().filter(|c| c.kind == kind).collect();
                        bar_group(kind.as_str().to_string(), &members)
                    })
                    .collect(),
                GroupBy::Occupation => {
                    let mut occupations: Vec<&str> = slice.iter().map(|c| c.occupation.as_str()).collect();
                    occupations.sort_unstable();
                    occupations.dedup();
                    occupations
                        .into_iter()
                        .map(|occ| {
                            let members: Vec<_> =
                                slice.iter().copied().filter(|c| c.occupation == occ).collect();
                            bar_group(occ.to_string(), &members)
                        })
                        .collect()
                }
            };
            charts.push(Chart {
                model: model.clone(),
                k,
                group_by: spec.group_by,
                aggregate: "unweighted mean across occupations".into(),
                series: vec![
                    Series {
                        name: "female".into(),
                        color: FEMALE_COLOR.into(),
                    },
                    Series {
                        name: "male".into(),
                        color: MALE_COLOR.into(),
                    },
                ],
                groups,
            });

            let counts = PromptKind::knowledge_kinds()
                .map(|kind| {
                    let mut c = EffectCounts {
                        kind,
                        enhanced: 0,
                        mitigated: 0,
                        overturned: 0,
                        unchanged: 0,
                        excluded: 0,
                    };
                    for e in analysis
                        .effects()
                        .filter(|e| &e.model_id == model && e.k == k && e.knowledge_kind == kind)
                    {
                        match e.effect {
                            Some(Effect::Enhanced) => c.enhanced += 1,
                            Some(Effect::Mitigated) => c.mitigated += 1,
                            Some(Effect::Overturned) => c.overturned += 1,
                            Some(Effect::Unchanged) => c.unchanged += 1,
                            None => c.excluded += 1,
                        }
                    }
                    c
                })
                .collect();
            effects.insert(slice_key(model, k), counts);
        }
    }
    let requested = spec.models.len() * spec.ks.len();
    let gap_fraction = if requested == 0 {
        1.0
    } else {
        gaps.len() as f64 / requested as f64
    };
    Ok(Report {
        charts,
        effects,
        gaps,
        gap_fraction,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

impl Report {
    pub fn summary_csv(&self, group_by: GroupBy) -> String {
        let group_col = match group_by {
            GroupBy::KnowledgeKind => "kind",
            GroupBy::Occupation => "occupation",
        };
        let mut out =
            format!("model,k,{group_col},p_female_mean,p_male_mean,n_occupations,n_non_gendered\n");
        for chart in &self.charts {
            for g in &chart.groups {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    csv_field(&chart.model),
                    chart.k,
                    csv_field(&g.label),
                    opt(g.female),
                    opt(g.male),
                    g.n_occupations,
                    g.n_non_gendered
                );
            }
        }
        out
    }

    pub fn effects_csv(&self) -> String {
        let mut out = String::from("model,k,kind,enhanced,mitigated,overturned,unchanged,excluded\n");
        for chart in &self.charts {
            for c in &self.effects[&slice_key(&chart.model, chart.k)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    csv_field(&chart.model),
                    chart.k,
                    c.kind,
                    c.enhanced,
                    c.mitigated,
                    c.overturned,
                    c.unchanged,
                    c.excluded
                );
            }
        }
        out
    }

    pub fn table_text(&self) -> String {
        let mut out = String::new();
        for chart in &self.charts {
            let _ = writeln!(out, "== {} | top-{} ==", chart.model, chart.k);
            let _ = writeln!(
                out,
                "{:<36} {:>10} {:>10} {:>6} {:>6}",
                "group", "p_female", "p_male", "n_occ", "n_ng"
            );
            for g in &chart.groups {
                let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
                let _ = writeln!(
                    out,
                    "{:<36} {:>10} {:>10} {:>6} {:>6}",
                    g.label,
                    f(g.female),
                    f(g.male),
                    g.n_occupations,
                    g.n_non_gendered
                );
            }
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<36} {:>9} {:>9} {:>10} {:>9} {:>8}",
                "effect", "enhanced", "mitigated", "overturned", "unchanged", "excluded"
            );
            for c in &self.effects[&slice_key(&chart.model, chart.k)] {
                let _ = writeln!(
                    out,
                    "{:<36} {:>9} {:>9} {:>10} {:>9} {:>8}",
                    c.kind.as_str(),
                    c.enhanced,
                    c.mitigated,
                    c.overturned,
                    c.unchanged,
                    c.excluded
                );
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "gaps: {} ({:.1}% of requested slices)",
            self.gaps.len(),
            self.gap_fraction * 100.0
        );
        for g in &self.gaps {
            let _ = writeln!(out, "  missing {} top-{}", g.model, g.k);
        }
        out
    }

    pub fn chart_data_json(&self) -> String {
        #[derive(Serialize)]
        struct ChartData<'a> {
            charts: &'a [Chart],
            gaps: &'a [SliceGap],
        }
        let mut s = serde_json::to_string_pretty(&ChartData {
            charts: &self.charts,
            gaps: &self.gaps,
        })
        .expect("chart data serializes");
        s.push('\n');
        s
    }

    pub fn artifacts(&self, spec: &ReportSpec) -> Vec<Artifact> {
        let mut out = Vec::new();
        for format in &spec.formats {
            match format {
                Format::TableText => out.push(Artifact {
                    name: "report.txt".into(),
                    contents: self.table_text(),
                }),
                Format::Csv => {
                    out.push(Artifact {
                        name: "summary.csv".into(),
                        contents: self.summary_csv(spec.group_by),
                    });
                    out.push(Artifact {
                        name: "effects.csv".into(),
                        contents: self.effects_csv(),
                    });
                }
                Format::ChartSvg => out.extend(self.charts.iter().map(|c| Artifact {
                    name: format!("chart_{}_k{}.svg", file_safe(&c.model), c.k),
                    contents: render_svg(c),
                })),
                Format::ChartData => out.push(Artifact {
                    name: "chart_data.json".into(),
                    contents: self.chart_data_json(),
                }),
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const BAR_W: f64 = 14.0;
const GROUP_GAP: f64 = 16.0;
const PLOT_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 190.0;

/// Grouped bar chart, female bars blue and male bars orange.
pub fn render_svg(chart: &Chart) -> String {
    let group_w = 2.0 * BAR_W + GROUP_GAP;
    let plot_w = group_w * chart.groups.len() as f64;
    let width = MARGIN_L + plot_w + 130.0;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let top = chart
        .groups
        .iter()
        .flat_map(|g| [g.female, g.male])
        .flatten()
        .fold(0.0f64, f64::max);
    // Round the axis up to the next tenth.
    let y_max = ((top * 10.0).ceil() / 10.0).max(0.1);
    let y = |v: f64| MARGIN_T + PLOT_H * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{} top-{} (mean probability)</text>"#,
        MARGIN_L + plot_w / 2.0,
        xml_escape(&chart.model),
        chart.k
    );
    for tick in 0..=5 {
        let v = y_max * tick as f64 / 5.0;
        let ty = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            ty + 4.0
        );
    }
    for (i, g) in chart.groups.iter().enumerate() {
        let x0 = MARGIN_L + GROUP_GAP / 2.0 + i as f64 * group_w;
        for (j, (value, color)) in [(g.female, FEMALE_COLOR), (g.male, MALE_COLOR)].into_iter().enumerate() {
            if let Some(v) = value {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{BAR_W}" height="{:.2}" fill="{color}"><title>{}: {v}</title></rect>"#,
                    x0 + j as f64 * BAR_W,
                    y(v),
                    PLOT_H * v / y_max,
                    xml_escape(&g.label)
                );
            }
        }
        let lx = x0 + BAR_W;
        let ly = MARGIN_T + PLOT_H + 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" transform="rotate(60 {lx:.2} {ly:.2})">{}</text>"#,
            xml_escape(&g.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        MARGIN_T + PLOT_H,
        MARGIN_L + plot_w,
        MARGIN_T + PLOT_H
    );
    let lx = MARGIN_L + plot_w + 16.0;
    for (j, series) in chart.series.iter().enumerate() {
        let ly = MARGIN_T + 10.0 + j as f64 * 18.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 10.0,
            series.color,
            lx + 16.0,
            ly,
            xml_escape(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
