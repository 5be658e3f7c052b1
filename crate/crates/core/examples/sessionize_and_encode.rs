//! Sessionize a hand-written event stream, split it, label it, and look at
//! the encoder's view of the input.

use trace_core::catalog::PageCatalog;
use trace_core::clickstream::{compute_labels, sessionize, LabelConfig, PageViewEvent, SplitExample, Task, HOUR, MINUTE, DAY};
use trace_core::encoding::{JourneyEncoder, TimeFeatures};

fn main() -> trace_core::Result<()> {
    let t0 = 1_700_000_000.0;
    let pages = [
        ("home", 0.0),
        ("search_hotels", 2.0 * MINUTE),
        ("hotel_details", 5.0 * MINUTE),
        ("hotel_reviews", 9.0 * MINUTE),
        // next day
        ("home", DAY),
        ("search_hotels", DAY + 3.0 * MINUTE),
        ("hotel_details", DAY + 4.0 * MINUTE),
        ("hotel_rooms", DAY + 7.0 * MINUTE),
        ("checkout_hotel", DAY + 10.0 * MINUTE),
        ("payment", DAY + 12.0 * MINUTE),
        ("booking_confirmation", DAY + 13.0 * MINUTE),
        // a week later
        ("trips_upcoming", 8.0 * DAY),
    ];
    let events: Vec<PageViewEvent> = pages
        .iter()
        .map(|&(p, dt)| {
            let e = PageViewEvent::new(p, t0 + dt);
            if p == "booking_confirmation" { e.purchase() } else { e }
        })
        .collect();

    let journey = sessionize("u-42", events, 2.0 * HOUR)?;
    println!("{} events in {} sessions", journey.num_events(), journey.sessions.len());
    for (k, s) in journey.sessions.iter().enumerate() {
        let names: Vec<_> = s.events.iter().map(|e| e.page_name.as_str()).collect();
        println!("  session {k}: {}", names.join(" > "));
    }

    let split = SplitExample::at(&journey, 6)?;
    let labels = compute_labels(&split, &PageCatalog::travel_default(), &LabelConfig::default());
    println!("\nsplit after event 6, next page: {:?}", split.next_page());
    for t in Task::ALL {
        println!("  {t}: {}", labels.get(t));
    }

    let enc = JourneyEncoder::fit(std::iter::once(&split.input), 8, TimeFeatures::All)?;
    let x = enc.encode(&split.input)?;
    println!("\nencoded (max_len 8, {} real rows)", x.true_length);
    println!("  row  page  dev  plat  loc  event_pos  session_pos  numeric");
    for r in 0..x.max_len {
        let c = x.cat_row(r);
        println!(
            "  {r:>3}  {:>4} {:>4} {:>5} {:>4}  {:>9}  {:>11}  {:?}",
            c[0],
            c[1],
            c[2],
            c[3],
            x.event_pos[r],
            x.session_pos[r],
            x.num_row(r).iter().map(|v| format!("{v:+.2}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
