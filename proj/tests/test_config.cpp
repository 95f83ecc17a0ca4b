#include <doctest.h>

#include <unistd.h>

#include "vertereg/config.hpp"
#include "vertereg/error.hpp"
#include "vertereg/io.hpp"

using namespace vertereg;

namespace {

std::optional<std::uint64_t> config_offset(std::string_view text, const fs::path& base = {}) {
  try {
    parse_config(text, base);
  } catch (const Error& e) {
    if (e.code() == Errc::config_error) return e.byte_offset().value_or(~0ull);
  }
  return std::nullopt;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    const RunConfig c = parse_config("");
    CHECK(c.registration.general_max_corr == 5.0);
    CHECK(c.registration.general_max_iters == 50);
    CHECK(c.registration.epsilon == 1e-8);
    CHECK(c.registration.piecewise_inlier == 2.0);
    CHECK(c.registration.piecewise_max_iters == 50);
    CHECK(!c.registration.piecewise_force_full_iters);
    CHECK(c.registration.update_gate == 0.9);
    CHECK(c.mode == AblationMode::full);
    CHECK(c.update_frames == 60);
    CHECK(c.first_tre_frame == 61);
    CHECK(!c.stream);
    CHECK(!c.recording);
  }

  TEST_CASE("every key parses") {
    const fs::path dir = fs::temp_directory_path() / ("vertereg_cfg_" + std::to_string(::getpid()));
    fs::create_directories(dir / "rec");
    fs::create_directories(dir / "models");
    const std::string text =
        "# run settings\n"
        "general_max_corr = 4.5\n"
        "general_max_iters = 30\n"
        "epsilon = 1e-6\n"
        "  piecewise_inlier=1.5  \n"
        "piecewise_max_iters = 20\n"
        "piecewise_force_full_iters = true\n"
        "update_gate = 0.8\n"
        "\n"
        "kalman_sigma_accel_mm = 3\n"
        "kalman_sigma_meas_mm = 0.7\n"
        "kalman_sigma_accel_rot = 0.02\n"
        "kalman_sigma_meas_rot = 0.004\n"
        "stream = 127.0.0.1:9000\n"
        "recording = rec\n"
        "models = " + (dir / "models").string() + "\n"
        "output = out\n"
        "mode = first-60\n"
        "update_frames = 30\n"
        "first_tre_frame = 10\n"
        "lateral_only = false\n";
    const RunConfig c = parse_config(text, dir);
    CHECK(c.registration.general_max_corr == 4.5);
    CHECK(c.registration.general_max_iters == 30);
    CHECK(c.registration.epsilon == 1e-6);
    CHECK(c.registration.piecewise_inlier == 1.5);
    CHECK(c.registration.piecewise_max_iters == 20);
    CHECK(c.registration.piecewise_force_full_iters);
    CHECK(c.registration.update_gate == 0.8);
    CHECK(c.kalman.sigma_accel_mm == 3.0);
    CHECK(c.kalman.sigma_meas_mm == 0.7);
    CHECK(c.kalman.sigma_accel_rot == 0.02);
    CHECK(c.kalman.sigma_meas_rot == 0.004);
    REQUIRE(c.stream);
    CHECK(*c.stream == StreamTarget{"127.0.0.1", 9000});
    CHECK(*c.recording == dir / "rec");
    CHECK(*c.models == dir / "models");
    CHECK(*c.output == dir / "out");
    CHECK(c.mode == AblationMode::first60);
    CHECK(c.update_frames == 30);
    CHECK(c.first_tre_frame == 10);
    CHECK(!c.lateral_only);

    write_file(dir / "run.cfg", "recording = rec\n");
    CHECK(*load_config(dir / "run.cfg").recording == dir / "rec");
    fs::remove_all(dir);
  }

  TEST_CASE("errors carry offsets") {
    CHECK(config_offset("colour = red\n") == 0u);
    CHECK(config_offset("epsilon = 1\n  bogus = 2\n") == 14u);
    CHECK(config_offset("epsilon = 1\nepsilon = 2\n") == 12u);
    CHECK(config_offset("update_gate = \n") == 13u);
    CHECK(config_offset("general_max_iters = 2.5\n") == 20u);
    CHECK(config_offset("epsilon = fast\n") == 10u);
    CHECK(config_offset("lateral_only = maybe\n") == 15u);
    CHECK(parse_config("lateral_only = yes\n").lateral_only);
    CHECK(config_offset("just words\n") == 0u);
    CHECK(config_offset("recording = /definitely/not/here\n") == 12u);
    CHECK(config_offset("mode = sideways\n") == 7u);
    CHECK(config_offset("stream = nohost\n") == 9u);
    CHECK(config_offset("update_gate = 1.5\n").has_value());
    CHECK(config_offset("kalman_sigma_meas_mm = 0\n").has_value());
    CHECK_THROWS_AS(load_config("/definitely/not/here.cfg"), Error);
  }

  TEST_CASE("stream targets") {
    CHECK(parse_stream_target("localhost:5005") == StreamTarget{"localhost", 5005});
    CHECK(parse_stream_target("[::1]:7000") == StreamTarget{"::1", 7000});
    CHECK(to_string(StreamTarget{"::1", 7000}) == "[::1]:7000");
    CHECK(to_string(StreamTarget{"10.0.0.2", 1}) == "10.0.0.2:1");
    for (const char* bad : {"", "host", "host:", ":80", "host:0", "host:65536", "host:12ab", "[::1]7000", "[::1:80"}) {
      CHECK_THROWS_AS(parse_stream_target(bad), Error);
    }
  }
}
