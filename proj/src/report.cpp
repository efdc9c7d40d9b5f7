#include "cxdi/report.hpp"

#include "json.hpp"

namespace cxdi {

std::string RunReport::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    j["seed"] = seed;
    j["failed"] = failed;
    if (failed) j["failure"] = failure;
    j["chi2"] = chi2;
    j["modified_rp"] = modified_rp;
    j["alignment"] = {{"translation", {alignment.translation[0], alignment.translation[1], alignment.translation[2]}},
                      {"twin", alignment.twin},
                      {"phase_offset", alignment.phase_offset}};
    j["fsw"] = {{"shell_edges", fsw.shell_edges}, {"weights", fsw.weights}};
    auto trace = nlohmann::ordered_json::array();
    for (const auto& [step, value] : loss_trace) trace.push_back({step, value});
    j["loss_trace"] = std::move(trace);
    return j.dump(2);
}

}  // namespace cxdi
