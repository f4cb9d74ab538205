//! MPD parsing for the subset used by SVC-over-DASH on-demand content:
//! one Period, AdaptationSets of Representations, segments addressed by
//! `SegmentTemplate` (`$Number$` style) or an explicit `SegmentList`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use url::Url;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MpdError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("missing mandatory element or attribute: {0}")]
    MissingMandatoryElement(&'static str),
    #[error("invalid value `{value}` for {what}")]
    InvalidAttribute { what: &'static str, value: String },
    #[error("duplicate representation id {0}")]
    DuplicateRepresentation(u32),
    #[error("representation {repr} depends on unknown representation {dep}")]
    UnknownDependency { repr: u32, dep: u32 },
    #[error("dependency cycle through representations {0:?}")]
    CyclicDependency(Vec<u32>),
    #[error("representations disagree on segment count ({0} vs {1})")]
    SegmentCountMismatch(usize, usize),
    #[error("segment URL `{0}` appears more than once")]
    DuplicateSegmentUrl(String),
    #[error("unknown representation {0}")]
    UnknownRepresentation(u32),
}

/// Segment duration as an exact `duration / timescale` fraction of a second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub duration: u64,
    pub timescale: u64,
}

impl SegmentTiming {
    pub fn seconds(&self) -> f64 {
        self.duration as f64 / self.timescale as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    /// SVC layer id.
    pub repr_id: u32,
    /// Bits per second of this layer alone.
    pub bandwidth: u64,
    /// Declared dependencies with the representation's own id removed.
    pub dependency_ids: Vec<u32>,
    pub segment_urls: Vec<String>,
    pub timing: SegmentTiming,
}

impl Representation {
    /// Nominal size of one segment of this layer, in bytes.
    pub fn segment_bytes(&self) -> u64 {
        (self.bandwidth as f64 * self.timing.seconds() / 8.0).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UrlClass {
    Mpd,
    Segment { repr_id: u32, seg_no: u32 },
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpdManifest {
    pub mpd_url: String,
    /// Seconds.
    pub media_duration: f64,
    /// Sorted by `repr_id`.
    pub representations: Vec<Representation>,
    /// Segment URL path → (repr_id, 1-based segment number).
    pub url_index: BTreeMap<String, (u32, u32)>,
}

/// Cheap pre-parse check used before any manifest is known.
pub fn looks_like_mpd(url: &str) -> bool {
    let path = url.split(['?', '#']).next().unwrap_or(url);
    path.to_ascii_lowercase().ends_with(".mpd")
}

/// Parses ISO-8601 durations of the `PnDTnHnMnS` family into seconds.
pub fn parse_iso_duration(s: &str) -> Result<f64, MpdError> {
    let bad = || MpdError::InvalidAttribute { what: "duration", value: s.to_string() };
    let rest = s.trim().strip_prefix('P').ok_or_else(bad)?;
    let (date, time) = match rest.split_once('T') {
        Some((d, t)) => (d, t),
        None => (rest, ""),
    };
    let mut total = 0.0;
    let mut take = |part: &str, units: &[(char, f64)]| -> Result<(), MpdError> {
        let mut num = String::new();
        for c in part.chars() {
            if c.is_ascii_digit() || c == '.' {
                num.push(c);
                continue;
            }
            let (_, mult) = units.iter().find(|(u, _)| *u == c).ok_or_else(bad)?;
            let v: f64 = num.parse().map_err(|_| bad())?;
            total += v * mult;
            num.clear();
        }
        if num.is_empty() {
            Ok(())
        } else {
            Err(bad())
        }
    };
    take(date, &[('Y', 365.0 * 86_400.0), ('M', 30.0 * 86_400.0), ('D', 86_400.0)])?;
    take(time, &[('H', 3600.0), ('M', 60.0), ('S', 1.0)])?;
    Ok(total)
}

fn children<'a, 'i>(node: Node<'a, 'i>, name: &'static str) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &'static str) -> Option<Node<'a, 'i>> {
    children(node, name).next()
}

fn parse_num<T: std::str::FromStr>(what: &'static str, v: &str) -> Result<T, MpdError> {
    v.trim().parse().map_err(|_| MpdError::InvalidAttribute { what, value: v.to_string() })
}

/// Attributes of `SegmentTemplate`, where the Representation-level element
/// overrides the AdaptationSet-level one field by field.
#[derive(Clone, Debug, Default)]
struct TemplateAttrs {
    media: Option<String>,
    start_number: Option<u64>,
    duration: Option<u64>,
    timescale: Option<u64>,
}

impl TemplateAttrs {
    fn read(node: Option<Node>) -> Result<Self, MpdError> {
        let Some(n) = node else { return Ok(Self::default()) };
        Ok(TemplateAttrs {
            media: n.attribute("media").map(str::to_string),
            start_number: n.attribute("startNumber").map(|v| parse_num("startNumber", v)).transpose()?,
            duration: n.attribute("duration").map(|v| parse_num("duration", v)).transpose()?,
            timescale: n.attribute("timescale").map(|v| parse_num("timescale", v)).transpose()?,
        })
    }

    fn overlay(&self, over: &TemplateAttrs) -> TemplateAttrs {
        TemplateAttrs {
            media: over.media.clone().or_else(|| self.media.clone()),
            start_number: over.start_number.or(self.start_number),
            duration: over.duration.or(self.duration),
            timescale: over.timescale.or(self.timescale),
        }
    }
}

/// Expands `$RepresentationID$`, `$Bandwidth$`, `$Number$` (optionally with
/// a `%0Nd` width) and `$$`.
fn expand_template(media: &str, repr_id: &str, bandwidth: u64, number: u64) -> Result<String, MpdError> {
    let mut out = String::with_capacity(media.len() + 8);
    let mut rest = media;
    while let Some(start) = rest.find('$') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('$')
            .ok_or_else(|| MpdError::InvalidAttribute { what: "SegmentTemplate@media", value: media.to_string() })?;
        let ident = &after[..end];
        let (name, fmt) = match ident.split_once('%') {
            Some((n, f)) => (n, Some(f)),
            None => (ident, None),
        };
        let value = match name {
            "" => "$".to_string(),
            "RepresentationID" => repr_id.to_string(),
            "Bandwidth" => bandwidth.to_string(),
            "Number" => number.to_string(),
            _ => return Err(MpdError::InvalidAttribute { what: "SegmentTemplate@media identifier", value: ident.to_string() }),
        };
        match fmt {
            Some(f) => {
                let width: usize = f
                    .strip_prefix('0')
                    .and_then(|w| w.strip_suffix('d'))
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| MpdError::InvalidAttribute { what: "SegmentTemplate@media format", value: f.to_string() })?;
                let _ = write!(out, "{value:0>width$}");
            }
            None => out.push_str(&value),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn resolve(base: &Url, reference: &str) -> Result<Url, MpdError> {
    base.join(reference.trim())
        .map_err(|_| MpdError::InvalidAttribute { what: "URL", value: reference.to_string() })
}

fn with_base(base: &Url, node: Node) -> Result<Url, MpdError> {
    match child(node, "BaseURL").and_then(|b| b.text()) {
        Some(text) => resolve(base, text),
        None => Ok(base.clone()),
    }
}

fn path_of(url: &Url) -> String {
    match url.query() {
        Some(q) => format!("{}?{}", url.path(), q),
        None => url.path().to_string(),
    }
}

/// Parses a manifest fetched from `mpd_url` (an absolute path such as
/// `/videos/x.mpd`, or a full `http://` URL). Segment URLs are stored as
/// absolute paths.
pub fn parse_mpd(mpd_url: &str, xml: &[u8]) -> Result<MpdManifest, MpdError> {
    let text = std::str::from_utf8(xml).map_err(|e| MpdError::MalformedXml(e.to_string()))?;
    let doc = Document::parse(text).map_err(|e| MpdError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "MPD" {
        return Err(MpdError::MissingMandatoryElement("MPD"));
    }
    let origin = Url::parse("http://origin.invalid/").expect("static");
    let mpd_base = resolve(&origin, mpd_url)?;
    let media_duration = root
        .attribute("mediaPresentationDuration")
        .map(parse_iso_duration)
        .transpose()?;
    let period = child(root, "Period").ok_or(MpdError::MissingMandatoryElement("Period"))?;
    let media_duration = match (media_duration, period.attribute("duration")) {
        (Some(d), _) => d,
        (None, Some(p)) => parse_iso_duration(p)?,
        (None, None) => return Err(MpdError::MissingMandatoryElement("MPD@mediaPresentationDuration")),
    };
    let base = with_base(&with_base(&mpd_base, root)?, period)?;

    let mut reps: BTreeMap<u32, Representation> = BTreeMap::new();
    for aset in children(period, "AdaptationSet") {
        let aset_base = with_base(&base, aset)?;
        let aset_tmpl = TemplateAttrs::read(child(aset, "SegmentTemplate"))?;
        let aset_list = child(aset, "SegmentList");
        for rep in children(aset, "Representation") {
            let id_text = rep.attribute("id").ok_or(MpdError::MissingMandatoryElement("Representation@id"))?;
            let repr_id: u32 = parse_num("Representation@id", id_text)?;
            let bandwidth: u64 = parse_num(
                "Representation@bandwidth",
                rep.attribute("bandwidth").ok_or(MpdError::MissingMandatoryElement("Representation@bandwidth"))?,
            )?;
            let mut dependency_ids = Vec::new();
            for tok in rep.attribute("dependencyId").unwrap_or("").split_whitespace() {
                let dep: u32 = parse_num("Representation@dependencyId", tok)?;
                if dep != repr_id && !dependency_ids.contains(&dep) {
                    dependency_ids.push(dep);
                }
            }
            let rep_base = with_base(&aset_base, rep)?;
            let rep_tmpl = child(rep, "SegmentTemplate");
            let list = child(rep, "SegmentList").or(aset_list);
            let (segment_urls, timing) = match list {
                Some(list) if rep_tmpl.is_none() && aset_tmpl.media.is_none() => segment_list(list, &rep_base)?,
                _ => {
                    let tmpl = aset_tmpl.overlay(&TemplateAttrs::read(rep_tmpl)?);
                    segment_template(&tmpl, &rep_base, id_text, bandwidth, media_duration)?
                }
            };
            let r = Representation { repr_id, bandwidth, dependency_ids, segment_urls, timing };
            if reps.insert(repr_id, r).is_some() {
                return Err(MpdError::DuplicateRepresentation(repr_id));
            }
        }
    }
    if reps.is_empty() {
        return Err(MpdError::MissingMandatoryElement("Representation"));
    }
    MpdManifest::assemble(mpd_url, media_duration, reps.into_values().collect())
}

fn segment_list(list: Node, base: &Url) -> Result<(Vec<String>, SegmentTiming), MpdError> {
    let timescale = list.attribute("timescale").map(|v| parse_num("SegmentList@timescale", v)).transpose()?.unwrap_or(1);
    let duration = list
        .attribute("duration")
        .map(|v| parse_num("SegmentList@duration", v))
        .transpose()?
        .ok_or(MpdError::MissingMandatoryElement("SegmentList@duration"))?;
    let base = with_base(base, list)?;
    let urls = children(list, "SegmentURL")
        .map(|s| {
            let media = s.attribute("media").ok_or(MpdError::MissingMandatoryElement("SegmentURL@media"))?;
            Ok(path_of(&resolve(&base, media)?))
        })
        .collect::<Result<Vec<_>, MpdError>>()?;
    if urls.is_empty() {
        return Err(MpdError::MissingMandatoryElement("SegmentURL"));
    }
    Ok((urls, SegmentTiming { duration, timescale }))
}

fn segment_template(
    tmpl: &TemplateAttrs,
    base: &Url,
    repr_id: &str,
    bandwidth: u64,
    media_duration: f64,
) -> Result<(Vec<String>, SegmentTiming), MpdError> {
    let media = tmpl.media.as_deref().ok_or(MpdError::MissingMandatoryElement("SegmentTemplate@media"))?;
    let duration = tmpl.duration.ok_or(MpdError::MissingMandatoryElement("SegmentTemplate@duration"))?;
    let timescale = tmpl.timescale.unwrap_or(1);
    if duration == 0 || timescale == 0 {
        return Err(MpdError::InvalidAttribute { what: "SegmentTemplate@duration", value: duration.to_string() });
    }
    let start = tmpl.start_number.unwrap_or(1);
    let count = (media_duration * timescale as f64 / duration as f64).ceil() as u64;
    let urls = (start..start + count)
        .map(|n| Ok(path_of(&resolve(base, &expand_template(media, repr_id, bandwidth, n)?)?)))
        .collect::<Result<Vec<_>, MpdError>>()?;
    Ok((urls, SegmentTiming { duration, timescale }))
}

impl MpdManifest {
    fn assemble(mpd_url: &str, media_duration: f64, representations: Vec<Representation>) -> Result<Self, MpdError> {
        let ids: BTreeSet<u32> = representations.iter().map(|r| r.repr_id).collect();
        for r in &representations {
            if let Some(dep) = r.dependency_ids.iter().find(|d| !ids.contains(d)) {
                return Err(MpdError::UnknownDependency { repr: r.repr_id, dep: *dep });
            }
        }
        let count = representations[0].segment_urls.len();
        if let Some(r) = representations.iter().find(|r| r.segment_urls.len() != count) {
            return Err(MpdError::SegmentCountMismatch(count, r.segment_urls.len()));
        }
        let mut url_index = BTreeMap::new();
        for r in &representations {
            for (i, url) in r.segment_urls.iter().enumerate() {
                if url_index.insert(url.clone(), (r.repr_id, i as u32 + 1)).is_some() {
                    return Err(MpdError::DuplicateSegmentUrl(url.clone()));
                }
            }
        }
        let manifest = MpdManifest { mpd_url: mpd_url.to_string(), media_duration, representations, url_index };
        manifest.check_acyclic()?;
        Ok(manifest)
    }

    fn check_acyclic(&self) -> Result<(), MpdError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let mut marks: BTreeMap<u32, Mark> = self.representations.iter().map(|r| (r.repr_id, Mark::Fresh)).collect();
        for start in self.representations.iter().map(|r| r.repr_id) {
            if marks[&start] != Mark::Fresh {
                continue;
            }
            // iterative DFS: (node, next dependency index)
            let mut stack: Vec<(u32, usize)> = vec![(start, 0)];
            marks.insert(start, Mark::Active);
            while let Some((node, idx)) = stack.pop() {
                let deps = &self.representation(node).expect("known").dependency_ids;
                if idx < deps.len() {
                    stack.push((node, idx + 1));
                    let dep = deps[idx];
                    match marks[&dep] {
                        Mark::Fresh => {
                            marks.insert(dep, Mark::Active);
                            stack.push((dep, 0));
                        }
                        Mark::Active => {
                            let mut cycle: Vec<u32> = stack.iter().map(|(n, _)| *n).skip_while(|n| *n != dep).collect();
                            cycle.push(dep);
                            return Err(MpdError::CyclicDependency(cycle));
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks.insert(node, Mark::Done);
                }
            }
        }
        Ok(())
    }

    pub fn representation(&self, repr_id: u32) -> Option<&Representation> {
        self.representations
            .binary_search_by_key(&repr_id, |r| r.repr_id)
            .ok()
            .map(|i| &self.representations[i])
    }

    pub fn segment_count(&self) -> usize {
        self.representations[0].segment_urls.len()
    }

    /// Ids in ascending order, as used for layer allocation.
    pub fn repr_ids(&self) -> Vec<u32> {
        self.representations.iter().map(|r| r.repr_id).collect()
    }

    /// The operation point for `repr_id`: itself plus everything it
    /// transitively depends on, ascending.
    pub fn resolve_chain(&self, repr_id: u32) -> Result<BTreeSet<u32>, MpdError> {
        self.representation(repr_id).ok_or(MpdError::UnknownRepresentation(repr_id))?;
        let mut chain = BTreeSet::new();
        let mut todo = vec![repr_id];
        while let Some(id) = todo.pop() {
            if chain.insert(id) {
                todo.extend(&self.representation(id).expect("validated").dependency_ids);
            }
        }
        Ok(chain)
    }

    pub fn classify_url(&self, url: &str) -> UrlClass {
        if url == self.mpd_url {
            return UrlClass::Mpd;
        }
        match self.url_index.get(url) {
            Some(&(repr_id, seg_no)) => UrlClass::Segment { repr_id, seg_no },
            None if looks_like_mpd(url) => UrlClass::Mpd,
            None => UrlClass::Unknown,
        }
    }

    pub fn segment_url(&self, repr_id: u32, seg_no: u32) -> Option<&str> {
        let r = self.representation(repr_id)?;
        r.segment_urls.get(seg_no.checked_sub(1)? as usize).map(String::as_str)
    }

    /// Writes the manifest back out in explicit `SegmentList` form.
    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<MPD xmlns=\"urn:mpeg:dash:schema:mpd:2011\" type=\"static\" profiles=\"urn:mpeg:dash:profile:isoff-on-demand:2011\" mediaPresentationDuration=\"PT{}S\">",
            self.media_duration
        );
        out.push_str("  <Period>\n    <AdaptationSet mimeType=\"video/svc\">\n");
        for r in &self.representations {
            let deps = r.dependency_ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
            let dep_attr = if deps.is_empty() { String::new() } else { format!(" dependencyId=\"{deps}\"") };
            let _ = writeln!(out, "      <Representation id=\"{}\" bandwidth=\"{}\"{dep_attr}>", r.repr_id, r.bandwidth);
            let _ = writeln!(out, "        <SegmentList timescale=\"{}\" duration=\"{}\">", r.timing.timescale, r.timing.duration);
            for u in &r.segment_urls {
                let _ = writeln!(out, "          <SegmentURL media=\"{}\"/>", xml_escape(u));
            }
            out.push_str("        </SegmentList>\n      </Representation>\n");
        }
        out.push_str("    </AdaptationSet>\n  </Period>\n</MPD>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    const URL: &str = "/SVCDataset/dataset/mpd-temp/BBB-I-1080p.mpd";

    fn mpd(body: &str) -> String {
        format!(
            r#"<?xml version="1.0"?>
<MPD xmlns="urn:mpeg:dash:schema:mpd:2011" mediaPresentationDuration="PT6S">
  <Period>
    <AdaptationSet>
      <SegmentTemplate media="seg$Number$-L$RepresentationID$.svc" duration="2" startNumber="1"/>
      {body}
    </AdaptationSet>
  </Period>
</MPD>"#
        )
    }

    #[test]
    fn iso_durations() {
        assert_eq!(parse_iso_duration("PT10M").unwrap(), 600.0);
        assert_eq!(parse_iso_duration("PT1H0M2.5S").unwrap(), 3602.5);
        assert_eq!(parse_iso_duration("P0Y0M0DT0H9M58.000S").unwrap(), 598.0);
        assert_eq!(parse_iso_duration("P1D").unwrap(), 86_400.0);
        for bad in ["10M", "PT10", "PTXS", "PT1.2.3S"] {
            assert!(parse_iso_duration(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn template_expansion() {
        assert_eq!(expand_template("a/$RepresentationID$/$Number%05d$.m4s", "7", 1, 42).unwrap(), "a/7/00042.m4s");
        assert_eq!(expand_template("x$$y$Bandwidth$", "7", 96000, 1).unwrap(), "x$y96000");
        assert!(expand_template("bad$Time$", "1", 1, 1).is_err());
        assert!(expand_template("open$Number", "1", 1, 1).is_err());
    }

    #[test]
    fn template_segments_and_index() {
        let body = r#"<Representation id="0" bandwidth="800000"/>
                      <Representation id="1" bandwidth="400000" dependencyId="0"/>"#;
        let m = parse_mpd(URL, mpd(body).as_bytes()).unwrap();
        assert_eq!(m.media_duration, 6.0);
        assert_eq!(m.segment_count(), 3);
        let r1 = m.representation(1).unwrap();
        assert_eq!(r1.dependency_ids, vec![0]);
        assert_eq!(r1.segment_urls[0], "/SVCDataset/dataset/mpd-temp/seg1-L1.svc");
        assert_eq!(r1.segment_bytes(), 100_000);
        assert_eq!(m.url_index.len(), 6);
        assert_eq!(m.classify_url("/SVCDataset/dataset/mpd-temp/seg3-L1.svc"), UrlClass::Segment { repr_id: 1, seg_no: 3 });
        assert_eq!(m.classify_url(URL), UrlClass::Mpd);
        assert_eq!(m.classify_url("/SVCDataset/other.mpd"), UrlClass::Mpd);
        assert_eq!(m.classify_url("/SVCDataset/dataset/mpd-temp/seg4-L1.svc"), UrlClass::Unknown);
        assert_eq!(m.segment_url(1, 3), Some("/SVCDataset/dataset/mpd-temp/seg3-L1.svc"));
        assert_eq!(m.segment_url(1, 0), None);
    }

    #[test]
    fn empty_dependency_is_base_layer() {
        let m = parse_mpd(URL, mpd(r#"<Representation id="0" bandwidth="1" dependencyId=""/>"#).as_bytes()).unwrap();
        assert!(m.representation(0).unwrap().dependency_ids.is_empty());
        assert_eq!(m.resolve_chain(0).unwrap(), BTreeSet::from([0]));
    }

    #[test]
    fn self_reference_is_normalized_away() {
        let body = r#"<Representation id="0" bandwidth="1"/>
                      <Representation id="1" bandwidth="1" dependencyId="1 0 0"/>"#;
        let m = parse_mpd(URL, mpd(body).as_bytes()).unwrap();
        assert_eq!(m.representation(1).unwrap().dependency_ids, vec![0]);
    }

    #[test]
    fn cycles_are_rejected() {
        let body = r#"<Representation id="1" bandwidth="1" dependencyId="2"/>
                      <Representation id="2" bandwidth="1" dependencyId="1"/>"#;
        match parse_mpd(URL, mpd(body).as_bytes()) {
            Err(MpdError::CyclicDependency(c)) => {
                assert!(c.contains(&1) && c.contains(&2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(parse_mpd(URL, b"<MPD><Period>"), Err(MpdError::MalformedXml(_))));
        assert!(matches!(
            parse_mpd(URL, br#"<MPD mediaPresentationDuration="PT1S"/>"#),
            Err(MpdError::MissingMandatoryElement("Period"))
        ));
        assert!(matches!(parse_mpd(URL, mpd("").as_bytes()), Err(MpdError::MissingMandatoryElement("Representation"))));
        assert!(matches!(
            parse_mpd(URL, mpd(r#"<Representation id="1" bandwidth="1" dependencyId="9"/>"#).as_bytes()),
            Err(MpdError::UnknownDependency { repr: 1, dep: 9 })
        ));
        assert!(matches!(
            parse_mpd(URL, mpd(r#"<Representation id="a" bandwidth="1"/>"#).as_bytes()),
            Err(MpdError::InvalidAttribute { .. })
        ));
        let m = parse_mpd(URL, mpd(r#"<Representation id="1" bandwidth="1"/>"#).as_bytes()).unwrap();
        assert_eq!(m.resolve_chain(5), Err(MpdError::UnknownRepresentation(5)));
    }

    #[test]
    fn segment_list_and_base_url() {
        let xml = r#"<MPD mediaPresentationDuration="PT4S"><BaseURL>http://concert.itec.aau.at/data/</BaseURL><Period>
            <AdaptationSet><Representation id="3" bandwidth="8000">
              <BaseURL>L3/</BaseURL>
              <SegmentList duration="2000" timescale="1000">
                <SegmentURL media="a.svc"/><SegmentURL media="/abs/b.svc"/>
              </SegmentList>
            </Representation></AdaptationSet></Period></MPD>"#;
        let m = parse_mpd(URL, xml.as_bytes()).unwrap();
        let r = m.representation(3).unwrap();
        assert_eq!(r.segment_urls, vec!["/data/L3/a.svc", "/abs/b.svc"]);
        assert_eq!(r.timing.seconds(), 2.0);
    }

    #[test]
    fn serialize_then_parse_is_a_fixpoint() {
        let body = r#"<Representation id="0" bandwidth="800000"/>
                      <Representation id="2" bandwidth="300000" dependencyId="2 0"/>
                      <Representation id="5" bandwidth="300000" dependencyId="2"/>"#;
        let m1 = parse_mpd(URL, mpd(body).as_bytes()).unwrap();
        let m2 = parse_mpd(URL, m1.to_xml().as_bytes()).unwrap();
        assert_eq!(m1, m2);
        let m3 = parse_mpd(URL, m2.to_xml().as_bytes()).unwrap();
        assert_eq!(m2, m3);
    }
}
