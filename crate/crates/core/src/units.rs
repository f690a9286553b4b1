//! Built-in unit table and canonical rendering of quantities.
//!
//! Every unit belongs to one dimension with a single canonical unit. Values are
//! converted by a fixed scale factor; there is no dimensional algebra.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown unit `{0}`")]
pub struct UnknownUnit(pub String);

/// Physical dimension a canonical unit measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Length,
    Area,
    Count,
    Population,
    Time,
    Steps,
    Unitless,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Length => "length",
            Dimension::Area => "area",
            Dimension::Count => "count",
            Dimension::Population => "population",
            Dimension::Time => "time",
            Dimension::Steps => "steps",
            Dimension::Unitless => "unitless",
        };
        f.write_str(s)
    }
}

/// Canonical unit used for numbers that carry no unit.
pub const UNITLESS: &str = "unitless";

// (alias, canonical, scale, dimension)
const TABLE: &[(&str, &str, f64, Dimension)] = &[
    ("meter", "meter", 1.0, Dimension::Length),
    ("meters", "meter", 1.0, Dimension::Length),
    ("metre", "meter", 1.0, Dimension::Length),
    ("m", "meter", 1.0, Dimension::Length),
    ("km", "meter", 1000.0, Dimension::Length),
    ("kilometer", "meter", 1000.0, Dimension::Length),
    ("kilometers", "meter", 1000.0, Dimension::Length),
    ("cm", "meter", 0.01, Dimension::Length),
    ("mm", "meter", 0.001, Dimension::Length),
    ("mile", "meter", 1609.344, Dimension::Length),
    ("miles", "meter", 1609.344, Dimension::Length),
    ("ft", "meter", 0.3048, Dimension::Length),
    ("foot", "meter", 0.3048, Dimension::Length),
    ("feet", "meter", 0.3048, Dimension::Length),
    ("acre", "acre", 1.0, Dimension::Area),
    ("acres", "acre", 1.0, Dimension::Area),
    ("thousand_acres", "acre", 1000.0, Dimension::Area),
    ("hectare", "acre", 2.471_053_814_671_653, Dimension::Area),
    ("hectares", "acre", 2.471_053_814_671_653, Dimension::Area),
    ("square_mile", "acre", 640.0, Dimension::Area),
    ("square_miles", "acre", 640.0, Dimension::Area),
    ("person", "person", 1.0, Dimension::Population),
    ("persons", "person", 1.0, Dimension::Population),
    ("people", "person", 1.0, Dimension::Population),
    ("immigrant", "person", 1.0, Dimension::Population),
    ("immigrants", "person", 1.0, Dimension::Population),
    ("thousand_person", "person", 1000.0, Dimension::Population),
    ("thousand_people", "person", 1000.0, Dimension::Population),
    ("count", "count", 1.0, Dimension::Count),
    ("item", "count", 1.0, Dimension::Count),
    ("items", "count", 1.0, Dimension::Count),
    ("second", "second", 1.0, Dimension::Time),
    ("seconds", "second", 1.0, Dimension::Time),
    ("sec", "second", 1.0, Dimension::Time),
    ("s", "second", 1.0, Dimension::Time),
    ("minute", "second", 60.0, Dimension::Time),
    ("minutes", "second", 60.0, Dimension::Time),
    ("hour", "second", 3600.0, Dimension::Time),
    ("hours", "second", 3600.0, Dimension::Time),
    ("day", "second", 86400.0, Dimension::Time),
    ("days", "second", 86400.0, Dimension::Time),
    ("step", "step", 1.0, Dimension::Steps),
    ("steps", "step", 1.0, Dimension::Steps),
    ("thousand_steps", "step", 1000.0, Dimension::Steps),
    ("million_steps", "step", 1_000_000.0, Dimension::Steps),
    ("unitless", UNITLESS, 1.0, Dimension::Unitless),
];

fn lookup(unit: &str) -> Option<&'static (&'static str, &'static str, f64, Dimension)> {
    let key = unit.trim().to_lowercase();
    TABLE.iter().find(|(alias, ..)| *alias == key)
}

/// Converts `value` in `unit` to the canonical unit of its dimension.
///
/// Canonical units map to themselves with scale 1, so the conversion is
/// idempotent.
pub fn normalize_unit(value: f64, unit: &str) -> Result<(f64, &'static str), UnknownUnit> {
    match lookup(unit) {
        Some(&(_, canonical, scale, _)) => Ok((value * scale, canonical)),
        None => Err(UnknownUnit(unit.to_string())),
    }
}

/// Canonical unit name for `unit`, if it is in the table.
pub fn canonical_unit(unit: &str) -> Option<&'static str> {
    lookup(unit).map(|&(_, canonical, ..)| canonical)
}

pub fn dimension_of(unit: &str) -> Option<Dimension> {
    lookup(unit).map(|&(.., dim)| dim)
}

/// Renders a number the same way everywhere: integers without a fractional
/// part, everything else with the shortest round-trip representation.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Canonical text for a quantity; unitless numbers render as the bare number.
pub fn format_quantity(value: f64, canonical: &str) -> String {
    if canonical == UNITLESS {
        format_number(value)
    } else {
        format!("{} {}", format_number(value), canonical)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let cleaned: String = s.chars().filter(|c| *c != ',' && *c != '_').collect();
    if cleaned.is_empty() || !cleaned.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn normalize_part(part: &str) -> String {
    let part = part.trim();
    let collapsed = part.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    // "<number>", "<number> <unit>" or "<number>-<unit>"
    let split_at = collapsed
        .char_indices()
        .find(|(_, c)| *c == ' ' || (*c == '-' && !collapsed.starts_with('-')))
        .map(|(i, _)| i);
    let (num, unit) = match split_at {
        Some(i) => (&collapsed[..i], collapsed[i + 1..].trim()),
        None => (collapsed.as_str(), ""),
    };
    if let Some(x) = parse_number(num) {
        if unit.is_empty() {
            return format_number(x);
        }
        let unit_key = unit.replace(' ', "_");
        if let Ok((v, canonical)) = normalize_unit(x, &unit_key) {
            return format_quantity(v, canonical);
        }
    }
    collapsed
}

/// Normalizes an answer string or artifact label for equality matching.
///
/// The text is split on `;` into parts; each part that reads as a number with
/// an optional known unit is rewritten in canonical form, other parts are
/// lowercased with whitespace collapsed.
pub fn normalize_answer_text(s: &str) -> String {
    s.split(';')
        .map(normalize_part)
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousand_acres_scale() {
        assert_eq!(normalize_unit(5.0, "thousand_acres").unwrap(), (5000.0, "acre"));
    }

    #[test]
    fn canonical_is_identity() {
        assert_eq!(normalize_unit(12000.0, "person").unwrap(), (12000.0, "person"));
    }

    #[test]
    fn unknown_unit_is_error() {
        assert_eq!(normalize_unit(1.0, "furlong"), Err(UnknownUnit("furlong".into())));
    }

    #[test]
    fn land_grant_difference() {
        let (held, u1) = normalize_unit(65.0, "thousand_acres").unwrap();
        let (grant, u2) = normalize_unit(5.0, "thousand_acres").unwrap();
        assert_eq!(u1, u2);
        assert_eq!(normalize_unit(held - grant, u1).unwrap(), (60000.0, "acre"));
    }

    #[test]
    fn idempotent_over_table() {
        for &(alias, ..) in TABLE {
            let (v, u) = normalize_unit(3.5, alias).unwrap();
            assert_eq!(normalize_unit(v, u).unwrap(), (v, u));
        }
    }

    #[test]
    fn answer_text_normalization() {
        assert_eq!(normalize_answer_text("60,000 acres"), "60000 acre");
        assert_eq!(normalize_answer_text("60000-acre"), "60000 acre");
        assert_eq!(
            normalize_answer_text("12 thousand_people; 60 thousand_acres"),
            "12000 person; 60000 acre"
        );
        assert_eq!(normalize_answer_text("  Halts   Never "), "halts never");
        assert_eq!(normalize_answer_text("47"), "47");
        assert_eq!(normalize_answer_text("-3 steps"), "-3 step");
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(60000.0), "60000");
        assert_eq!(format_number(0.25), "0.25");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_quantity(4.0, UNITLESS), "4");
    }
}
