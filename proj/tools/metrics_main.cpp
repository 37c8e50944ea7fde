#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mul/metrics.hpp"
#include "tool_common.hpp"

using namespace mul;

int main(int argc, char** argv) {
    CLI::App app{"teacher-quality metrics"};
    std::string phones_path, units_path, report_path;
    app.add_option("--phones", phones_path, "phone label file or directory")->required();
    app.add_option("--units", units_path, "unit label file or directory")->required();
    app.add_option("--report", report_path, "output JSON report")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const auto phones = tool::load_label_arg(phones_path);
        const auto units = tool::load_label_arg(units_path);
        const ContingencyTable table = build_contingency(phones, units);
        const nlohmann::json report = metrics_report(table);
        std::ofstream os(report_path);
        if (!os) throw std::runtime_error("cannot open for writing: " + report_path);
        os << report.dump(2) << "\n";
        std::cout << "phone_purity=" << report["phone_purity"].get<double>()
                  << " cluster_purity=" << report["cluster_purity"].get<double>()
                  << " pnmi=" << report["pnmi"].get<double>() << " frames=" << table.total
                  << " shape=" << table.num_phones << "x" << table.num_units << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
