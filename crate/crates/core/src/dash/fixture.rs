//! Generator for the synthetic SVC manifest used by the default scenario.
//!
//! 50 layers in blocks of 16. Inside a block every layer depends on its
//! predecessor; the first layer of a block depends on the third layer of
//! the previous block. This yields the closure `49 48 34 33 32 18 17 16 2 1 0`
//! for the topmost layer and six layers for representation 18.
//! Layer bitrates are synthetic.

use std::fmt::Write as _;

pub const HOST: &str = "concert.itec.aau.at";
pub const MPD_URL: &str = "/SVCDataset/dataset/mpd-temp/BBB-I-1080p.mpd";

#[derive(Clone, Debug, PartialEq)]
pub struct SvcFixture {
    pub representations: u32,
    pub media_duration_s: u32,
    /// Milliseconds; the segment count is `ceil(duration / segment)`.
    pub segment_duration_ms: u64,
    pub base_bandwidth: u64,
    pub enhancement_bandwidth: u64,
    pub enhancement_step: u64,
}

impl Default for SvcFixture {
    fn default() -> Self {
        SvcFixture {
            representations: 50,
            media_duration_s: 600,
            segment_duration_ms: 2007,
            base_bandwidth: 600_000,
            enhancement_bandwidth: 200_000,
            enhancement_step: 4_000,
        }
    }
}

/// Direct dependency of a layer in the block layout, `None` for layer 0.
pub fn direct_dependency(id: u32) -> Option<u32> {
    match (id / 16, id % 16) {
        (0, 0) => None,
        (b, 0) => Some((b - 1) * 16 + 2),
        _ => Some(id - 1),
    }
}

impl SvcFixture {
    pub fn bandwidth(&self, id: u32) -> u64 {
        if id == 0 {
            self.base_bandwidth
        } else {
            self.enhancement_bandwidth + self.enhancement_step * id as u64
        }
    }

    pub fn segment_count(&self) -> u64 {
        (self.media_duration_s as u64 * 1000).div_ceil(self.segment_duration_ms)
    }

    /// Full closure of `id` including itself, highest first, which is how
    /// the dataset spells its dependency attribute.
    fn declared_dependencies(id: u32) -> Vec<u32> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(d) = direct_dependency(cur) {
            out.push(d);
            cur = d;
        }
        out
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<MPD xmlns=\"urn:mpeg:dash:schema:mpd:2011\" type=\"static\" minBufferTime=\"PT2S\" \
             profiles=\"urn:mpeg:dash:profile:isoff-on-demand:2011\" mediaPresentationDuration=\"PT{}S\">",
            self.media_duration_s
        );
        out.push_str("  <Period>\n    <AdaptationSet mimeType=\"video/svc\" segmentAlignment=\"true\">\n");
        let _ = writeln!(
            out,
            "      <SegmentTemplate timescale=\"1000\" duration=\"{}\" startNumber=\"1\" media=\"BBB-I-1080p.seg$Number$-L$RepresentationID$.svc\"/>",
            self.segment_duration_ms
        );
        for id in 0..self.representations {
            let deps = Self::declared_dependencies(id)
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "      <Representation id=\"{id}\" bandwidth=\"{}\" dependencyId=\"{deps}\" width=\"1920\" height=\"1080\"/>",
                self.bandwidth(id)
            );
        }
        out.push_str("    </AdaptationSet>\n  </Period>\n</MPD>\n");
        out
    }
}
